"""Discrete dynamic movement primitives in joint space and Cartesian space.

Scalar dimensions follow the second-order attractor

    tau^2 ydd = alpha_y (beta_y (g - y) - tau yd) + f(x)

with the forcing term ``f(x) = x * sum_i psi_i(x) w_i / sum_i psi_i(x)``
driven by the phase ``x`` of an exponentially decaying canonical system.
There is no ``(g - y0)`` amplitude scaling, so weights mean the same thing
for every start/goal pair.

Orientation uses the unit-quaternion formulation

    tau eta_dot = alpha_y (beta_y 2 log(g * conj(q)) - eta) + f(x)
    q <- exp(dt / (2 tau) * eta) * q

where ``eta = tau * omega``. Both are integrated with explicit Euler, and the
stored velocities/accelerations are the integrator's own states.

Genome layout: weights flattened dimension-major (all basis weights of
dimension 0, then dimension 1, ...). A Cartesian policy has six dimensions:
x, y, z followed by the three rotation-vector components.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Literal

import numpy as np
from numba import njit

from . import ik as ik_module
from .kinematics import ContractError, KinematicChain, Pose
from .quaternion import _exp, _hemi, _log, _mul, _mul_conj, _normalize, align_signs, check_unit

Space = Literal["joint", "cartesian"]

N_BASIS = 50
ALPHA_Y = 25.0
TRUNCATION = 1e-10


@dataclass(frozen=True)
class CanonicalSystem:
    """Phase ``x(t) = exp(-alpha_x t / tau)`` sampled at ``n_steps`` points over ``[0, tau]``."""

    tau: float = 1.0
    n_steps: int = 101
    alpha_x: float = math.log(100.0)

    def __post_init__(self):
        if self.tau <= 0 or self.n_steps < 3 or self.alpha_x <= 0:
            raise ContractError("canonical system needs tau > 0, n_steps >= 3, alpha_x > 0")

    @property
    def dt(self) -> float:
        return self.tau / (self.n_steps - 1)

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps) * self.dt

    def phase(self) -> np.ndarray:
        return np.exp(-self.alpha_x * self.times() / self.tau)


@lru_cache(maxsize=32)
def _basis(alpha_x: float, tau: float, n_steps: int, n_basis: int):
    # centers equally spaced in time, mapped through the phase
    centers = np.exp(-alpha_x * np.linspace(0.0, 1.0, n_basis))
    gaps = np.abs(np.diff(centers))
    gaps = np.append(gaps, gaps[-1])
    # neighbours cross at activation 0.5
    widths = 4.0 * math.log(2.0) / gaps ** 2
    x = np.exp(-alpha_x * np.arange(n_steps) * (tau / (n_steps - 1)) / tau)
    psi = np.exp(-widths[None, :] * (x[:, None] - centers[None, :]) ** 2)
    psi[psi < TRUNCATION] = 0.0
    features = x[:, None] * psi / psi.sum(axis=1, keepdims=True)
    for arr in (centers, widths, features, psi):
        arr.setflags(write=False)
    return centers, widths, psi, features


def basis_activations(canonical: CanonicalSystem, n_basis: int = N_BASIS):
    """(T, n_basis) truncated Gaussian activations ``psi_i(x_t)``."""
    return _basis(canonical.alpha_x, canonical.tau, canonical.n_steps, n_basis)[2]


def forcing_features(canonical: CanonicalSystem, n_basis: int = N_BASIS) -> np.ndarray:
    """(T, n_basis) matrix ``x psi_i / sum psi``; forcing term is ``features @ w``."""
    return _basis(canonical.alpha_x, canonical.tau, canonical.n_steps, n_basis)[3]


@dataclass(frozen=True)
class DmpPolicy:
    """DMP with fixed metaparameters; only ``weights`` are learned.

    ``start``/``goal`` are joint vectors for ``space="joint"`` and 7-vectors
    ``(x, y, z, qw, qx, qy, qz)`` for ``space="cartesian"``.
    """

    space: Space
    start: np.ndarray
    goal: np.ndarray
    weights: np.ndarray
    canonical: CanonicalSystem = field(default_factory=CanonicalSystem)
    alpha_y: float = ALPHA_Y

    def __post_init__(self):
        start = np.array(self.start, dtype=float)
        goal = np.array(self.goal, dtype=float)
        weights = np.array(self.weights, dtype=float)
        if self.space not in ("joint", "cartesian"):
            raise ContractError(f"unknown space {self.space!r}")
        if start.shape != goal.shape or start.ndim != 1:
            raise ContractError("start and goal must be vectors of the same length")
        if self.space == "cartesian":
            if start.shape != (7,):
                raise ContractError("cartesian start/goal are (x, y, z, qw, qx, qy, qz)")
            for q in (start[3:], goal[3:]):
                if abs(np.linalg.norm(q) - 1.0) > 1e-9:
                    raise ContractError("cartesian start/goal orientations must be unit quaternions")
        dims = 6 if self.space == "cartesian" else start.shape[0]
        if weights.ndim != 2 or weights.shape[0] != dims:
            raise ContractError(f"weights must have shape ({dims}, n_basis), got {weights.shape}")
        for name, arr in (("start", start), ("goal", goal), ("weights", weights)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def joint(cls, start, goal, canonical: CanonicalSystem | None = None, n_basis: int = N_BASIS,
              alpha_y: float = ALPHA_Y) -> "DmpPolicy":
        start = np.asarray(start, dtype=float)
        return cls("joint", start, goal, np.zeros((start.shape[0], n_basis)),
                   canonical or CanonicalSystem(), alpha_y)

    @classmethod
    def cartesian(cls, start: Pose, goal: Pose, canonical: CanonicalSystem | None = None,
                  n_basis: int = N_BASIS, alpha_y: float = ALPHA_Y) -> "DmpPolicy":
        goal_q = goal.orientation
        if np.dot(goal_q, start.orientation) < 0:
            goal_q = -goal_q
        return cls("cartesian", np.concatenate([start.position, start.orientation]),
                   np.concatenate([goal.position, goal_q]), np.zeros((6, n_basis)),
                   canonical or CanonicalSystem(), alpha_y)

    @property
    def beta_y(self) -> float:
        return self.alpha_y / 4.0

    @property
    def n_dims(self) -> int:
        return self.weights.shape[0]

    @property
    def n_basis(self) -> int:
        return self.weights.shape[1]

    @property
    def genome(self) -> np.ndarray:
        return self.weights.ravel().copy()

    @property
    def genome_size(self) -> int:
        return self.weights.size

    def with_genome(self, genome) -> "DmpPolicy":
        genome = np.asarray(genome, dtype=float)
        if genome.shape != (self.weights.size,):
            raise ContractError(f"genome must have {self.weights.size} entries, got {genome.shape}")
        return replace(self, weights=genome.reshape(self.weights.shape))

    def centers(self) -> np.ndarray:
        c = self.canonical
        return _basis(c.alpha_x, c.tau, c.n_steps, self.n_basis)[0]

    def widths(self) -> np.ndarray:
        c = self.canonical
        return _basis(c.alpha_x, c.tau, c.n_steps, self.n_basis)[1]

    def forcing(self) -> np.ndarray:
        """(T, dims) forcing term at every step."""
        return forcing_features(self.canonical, self.n_basis) @ self.weights.T


@dataclass(frozen=True)
class Trajectory:
    positions: np.ndarray
    velocities: np.ndarray | None
    accelerations: np.ndarray | None
    dt: float
    orientations: np.ndarray | None = None
    angular_velocities: np.ndarray | None = None
    angular_accelerations: np.ndarray | None = None

    def __len__(self) -> int:
        return self.positions.shape[0]

    def poses(self) -> list[Pose]:
        if self.orientations is None:
            raise ContractError("not a pose trajectory")
        return [Pose(p, q) for p, q in zip(self.positions, self.orientations)]


# ---------------------------------------------------------------- kernels


@njit(cache=True, nogil=True)
def _integrate(y0, g, F, tau, dt, ay, by):
    T, D = F.shape
    Y = np.empty((T, D))
    YD = np.empty((T, D))
    YDD = np.empty((T, D))
    y = y0.copy()
    yd = np.zeros(D)
    tau2 = tau * tau
    for t in range(T):
        ydd = (ay * (by * (g - y) - tau * yd) + F[t]) / tau2
        Y[t] = y
        YD[t] = yd
        YDD[t] = ydd
        y = y + dt * yd
        yd = yd + dt * ydd
    return Y, YD, YDD


@njit(cache=True, nogil=True)
def _integrate_quaternion(q0, g, F, tau, dt, ay, by):
    T = F.shape[0]
    Q = np.empty((T, 4))
    W = np.empty((T, 3))
    WD = np.empty((T, 3))
    q = q0.copy()
    eta = np.zeros(3)
    for t in range(T):
        err = 2.0 * _log(_hemi(_mul_conj(g, q)))
        eta_dot = (ay * (by * err - eta) + F[t]) / tau
        Q[t] = q
        W[t] = eta / tau
        WD[t] = eta_dot / tau
        q = _normalize(_mul(_exp((dt / (2.0 * tau)) * eta), q))
        eta = eta + dt * eta_dot
    return Q, W, WD


# ---------------------------------------------------------------- rollout


def rollout_scalar(policy: DmpPolicy) -> Trajectory:
    """Integrate the scalar dimensions (all joints, or the Cartesian position block)."""
    c = policy.canonical
    F = policy.forcing()
    if policy.space == "cartesian":
        y0, g, F = policy.start[:3], policy.goal[:3], F[:, :3]
    else:
        y0, g = policy.start, policy.goal
    Y, YD, YDD = _integrate(np.ascontiguousarray(y0), np.ascontiguousarray(g),
                            np.ascontiguousarray(F), c.tau, c.dt, policy.alpha_y, policy.beta_y)
    return Trajectory(Y, YD, YDD, c.dt)


def rollout_quaternion(policy: DmpPolicy) -> Trajectory:
    """Orientation part of a Cartesian policy; ``positions`` is left empty."""
    if policy.space != "cartesian":
        raise ContractError("quaternion rollout needs a cartesian policy")
    c = policy.canonical
    F = np.ascontiguousarray(policy.forcing()[:, 3:])
    Q, W, WD = _integrate_quaternion(np.ascontiguousarray(policy.start[3:]),
                                     np.ascontiguousarray(policy.goal[3:]),
                                     F, c.tau, c.dt, policy.alpha_y, policy.beta_y)
    empty = np.zeros((c.n_steps, 0))
    return Trajectory(empty, empty, empty, c.dt, Q, W, WD)


def rollout(policy: DmpPolicy) -> Trajectory:
    scalar = rollout_scalar(policy)
    if policy.space == "joint":
        return scalar
    rot = rollout_quaternion(policy)
    return replace(scalar, orientations=rot.orientations, angular_velocities=rot.angular_velocities,
                   angular_accelerations=rot.angular_accelerations)


# ---------------------------------------------------------------- imitation


def forward_differences(values: np.ndarray, dt: float):
    """Velocities and accelerations matching the explicit Euler update.

    ``v_t = (y_{t+1} - y_t) / dt``; the last sample repeats the previous
    velocity and has zero acceleration.
    """
    v = np.empty_like(values)
    v[:-1] = np.diff(values, axis=0) / dt
    v[-1] = v[-2]
    a = np.empty_like(values)
    a[:-1] = np.diff(v, axis=0) / dt
    a[-1] = 0.0
    return v, a


def _angular_differences(quats: np.ndarray, dt: float):
    w = np.zeros((len(quats), 3))
    for t in range(len(quats) - 1):
        w[t] = 2.0 * _log(_hemi(_mul_conj(quats[t + 1], quats[t]))) / dt
    w[-1] = w[-2]
    wd = np.empty_like(w)
    wd[:-1] = np.diff(w, axis=0) / dt
    wd[-1] = 0.0
    return w, wd


def _fit(features: np.ndarray, targets: np.ndarray, regularization: float) -> np.ndarray:
    """Ridge least squares; returns (dims, n_basis) weights."""
    A = features.T @ features + regularization * np.eye(features.shape[1])
    return np.linalg.solve(A, features.T @ targets).T


def imitate(demo: Trajectory, n_basis: int = N_BASIS, alpha_y: float = ALPHA_Y,
            alpha_x: float = math.log(100.0), goal=None, regularization: float = 1e-10) -> DmpPolicy:
    """Fit DMP weights reproducing a demonstration.

    The demonstration's duration fixes ``tau``; the goal defaults to its last
    sample (position block, plus quaternion for pose demos). Missing
    velocities are taken by forward differences; orientation demos are made
    sign-continuous first.
    """
    Y = np.asarray(demo.positions, dtype=float)
    T = Y.shape[0]
    if T < 3:
        raise ContractError("a demonstration needs at least 3 samples")
    canonical = CanonicalSystem(tau=demo.dt * (T - 1), n_steps=T, alpha_x=alpha_x)
    tau = canonical.tau
    beta_y = alpha_y / 4.0
    features = forcing_features(canonical, n_basis)

    if demo.velocities is not None and demo.accelerations is not None:
        YD, YDD = np.asarray(demo.velocities), np.asarray(demo.accelerations)
    else:
        YD, YDD = forward_differences(Y, demo.dt)
    goal = None if goal is None else np.asarray(goal, dtype=float)
    y0 = Y[0]
    g = Y[-1] if goal is None else goal[:Y.shape[1]]
    f_pos = tau ** 2 * YDD - alpha_y * (beta_y * (g - Y) - tau * YD)
    w_pos = _fit(features, f_pos, regularization)

    if demo.orientations is None:
        return DmpPolicy("joint", y0, g, w_pos, canonical, alpha_y)

    Q = align_signs([check_unit(q) for q in demo.orientations])
    if demo.angular_velocities is not None and demo.angular_accelerations is not None:
        W, WD = np.asarray(demo.angular_velocities), np.asarray(demo.angular_accelerations)
    else:
        W, WD = _angular_differences(Q, demo.dt)
    gq = Q[-1] if goal is None else check_unit(goal[Y.shape[1]:])
    if np.dot(gq, Q[-1]) < 0:
        gq = -gq
    err = np.array([2.0 * _log(_hemi(_mul_conj(gq, q))) for q in Q])
    f_rot = tau * (tau * WD) - alpha_y * (beta_y * err - tau * W)
    w_rot = _fit(features, f_rot, regularization)
    return DmpPolicy("cartesian", np.concatenate([y0, Q[0]]), np.concatenate([g, gq]),
                     np.vstack([w_pos, w_rot]), canonical, alpha_y)


# ---------------------------------------------------------------- execution


def execute_policy(policy: DmpPolicy, chain: KinematicChain,
                   settings: ik_module.IkSettings = ik_module.IkSettings(),
                   solver: ik_module.Solver = "approx", q0=None) -> Trajectory:
    """Joint trajectory the robot actually follows.

    Joint policies are rolled out and clamped to the joint limits; the
    velocities/accelerations are the integrator states. Cartesian policies
    are rolled out to poses and converted step by step with ``solver``,
    warm-started at ``q0``; their joint velocities/accelerations are forward
    differences of the IK solutions.
    """
    if policy.space == "joint":
        if policy.n_dims != chain.n_joints:
            raise ContractError(f"joint policy has {policy.n_dims} dims, chain has {chain.n_joints} joints")
        traj = rollout_scalar(policy)
        return replace(traj, positions=np.clip(traj.positions, chain.lower, chain.upper))
    if q0 is None:
        raise ContractError("executing a cartesian policy needs a start configuration q0")
    poses = rollout(policy)
    qs = ik_module.solve_trajectory(chain, (poses.positions, poses.orientations), q0, settings, solver)
    qd, qdd = forward_differences(qs, poses.dt)
    return Trajectory(qs, qd, qdd, poses.dt)
