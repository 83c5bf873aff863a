"""Trajectory-capable inverse kinematics.

Two solvers share one signature:

``solve_exact``
    Damped-pseudoinverse iteration. When it cannot meet its position and
    rotation tolerances it reports failure and hands back ``q_prev``
    untouched, so the end-effector does not move.

``solve_approx``
    Minimizes the weighted pose distance (plus an optional pull toward the
    warm start) inside the joint limits with a projected BFGS method. It
    always returns its best iterate, which for an unreachable target is the
    closest reachable pose under the chosen weights.

Both loops are compiled with numba and release the GIL.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from numba import njit

from .kinematics import (
    ContractError,
    KinematicChain,
    MetricWeights,
    Pose,
    _fk,
    _fk_jacobian,
    _pose_distance,
    forward_kinematics,
    pose_distance,
)
from .quaternion import _hemi, _log, _mul_conj, _rotation_vector_to

Solver = Literal["exact", "approx"]

# exact solver: iterations without a relative error decrease of 1e-6 before declaring failure
STALL_WINDOW = 20

_call_lock = threading.Lock()
_calls = {"exact": 0, "approx": 0}


def call_counts() -> dict[str, int]:
    """Number of IK problems solved in this process, per solver."""
    with _call_lock:
        return dict(_calls)


def _count(solver: str, n: int = 1):
    with _call_lock:
        _calls[solver] += n


@dataclass(frozen=True)
class IkSettings:
    """Solver configuration.

    ``tolerance`` is the residual (pose distance) below which the approximate
    solver stops and reports convergence. The exact solver instead checks
    ``position_tolerance`` (m) and ``rotation_tolerance`` (rad) separately.
    """

    weights: MetricWeights = field(default_factory=MetricWeights)
    max_iterations: int = 100
    tolerance: float = 1e-12
    gradient_tolerance: float = 1e-8
    step_tolerance: float = 1e-12
    damping: float = 1e-2
    smoothness: float = 0.0
    exact_max_iterations: int = 200
    position_tolerance: float = 1e-4
    rotation_tolerance: float = 1e-3
    restarts: int = 0
    restart_seed: int = 0

    def __post_init__(self):
        for name in ("tolerance", "gradient_tolerance", "step_tolerance",
                     "position_tolerance", "rotation_tolerance"):
            if not getattr(self, name) > 0.0:
                raise ContractError(f"IkSettings.{name} must be > 0")
        if self.damping < 0.0 or self.smoothness < 0.0:
            raise ContractError("damping and smoothness must be >= 0")
        if self.max_iterations < 1 or self.exact_max_iterations < 1 or self.restarts < 0:
            raise ContractError("iteration counts must be positive")

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "weights"}
        out["w_pos"] = self.weights.w_pos
        out["w_rot"] = self.weights.w_rot
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "IkSettings":
        data = dict(data)
        weights = MetricWeights(float(data.pop("w_pos", 1.0)), float(data.pop("w_rot", 1.0)))
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ContractError(f"unknown IK settings: {sorted(unknown)}")
        return cls(weights=weights, **data)


@dataclass(frozen=True)
class IkResult:
    q: np.ndarray
    achieved: Pose
    residual: float
    converged: bool
    iterations: int


# ---------------------------------------------------------------- kernels


@njit(cache=True, nogil=True)
def _objective(offsets, rotations, axes, ee_t, ee_r, q, q_prev, tp, tq, w_pos, w_rot, smooth):
    """Objective value, its gradient, and the pose-distance part alone."""
    p, Q, J = _fk_jacobian(offsets, rotations, axes, ee_t, ee_r, q)
    dp = p - tp
    # rotation vector of Q * conj(tq) on the short arc; the metric term is
    # w_rot * (|phi|/2)^2 and its gradient is (w_rot/2) * J_w^T phi because
    # phi^T J_l^{-1}(phi) = phi^T
    phi = 2.0 * _log(_hemi(_mul_conj(Q, tq)))
    dist = _pose_distance(p, Q, tp, tq, w_pos, w_rot)
    n = q.shape[0]
    grad = np.empty(n)
    f = dist
    for i in range(n):
        gi = 2.0 * w_pos * (J[0, i] * dp[0] + J[1, i] * dp[1] + J[2, i] * dp[2])
        gi += 0.5 * w_rot * (J[3, i] * phi[0] + J[4, i] * phi[1] + J[5, i] * phi[2])
        if smooth > 0.0:
            dq = q[i] - q_prev[i]
            gi += 2.0 * smooth * dq
            f += smooth * dq * dq
        grad[i] = gi
    return f, grad, dist


@njit(cache=True, nogil=True)
def _clip(x, lo, hi):
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        out[i] = min(max(x[i], lo[i]), hi[i])
    return out


@njit(cache=True, nogil=True)
def _gauss_newton_inverse(offsets, rotations, axes, ee_t, ee_r, x, w_pos, w_rot, smooth):
    """Inverse of the damped Gauss-Newton Hessian of the objective at ``x``.

    Used as the starting (and reset) quasi-Newton matrix: with it the first
    step is a Gauss-Newton step, so reachable warm-started targets converge
    in a handful of iterations.
    """
    _, _, J = _fk_jacobian(offsets, rotations, axes, ee_t, ee_r, x)
    n = x.shape[0]
    M = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            M[i, j] = (2.0 * w_pos * (J[0, i] * J[0, j] + J[1, i] * J[1, j] + J[2, i] * J[2, j])
                       + 0.5 * w_rot * (J[3, i] * J[3, j] + J[4, i] * J[4, j] + J[5, i] * J[5, j]))
    trace = 0.0
    for i in range(n):
        trace += M[i, i]
    mu = 1e-2 * trace / n + 1e-12
    for i in range(n):
        M[i, i] += 2.0 * smooth + mu
    return np.linalg.inv(M)


@njit(cache=True, nogil=True)
def _bfgs_box(offsets, rotations, axes, ee_t, ee_r, lo, hi, x0, q_prev, tp, tq,
              w_pos, w_rot, smooth, max_iter, ftol, gtol, xtol):
    """Projected BFGS on the box [lo, hi]; returns (x, dist, iterations)."""
    n = x0.shape[0]
    x = _clip(x0, lo, hi)
    f, g, dist = _objective(offsets, rotations, axes, ee_t, ee_r, x, q_prev, tp, tq, w_pos, w_rot, smooth)
    H = _gauss_newton_inverse(offsets, rotations, axes, ee_t, ee_r, x, w_pos, w_rot, smooth)
    fresh = True
    free = np.empty(n, dtype=np.bool_)
    it = 0
    while it < max_iter:
        if f <= ftol:
            break
        pgmax = 0.0
        for i in range(n):
            pg = abs(x[i] - min(max(x[i] - g[i], lo[i]), hi[i]))
            if pg > pgmax:
                pgmax = pg
        if pgmax < gtol:
            break
        for i in range(n):
            at_lo = x[i] <= lo[i] and g[i] > 0.0
            at_hi = x[i] >= hi[i] and g[i] < 0.0
            free[i] = not (at_lo or at_hi)
        d = np.zeros(n)
        for i in range(n):
            if free[i]:
                acc = 0.0
                for j in range(n):
                    if free[j]:
                        acc -= H[i, j] * g[j]
                d[i] = acc
        slope = 0.0
        for i in range(n):
            slope += g[i] * d[i]
        if slope >= 0.0:
            # the free-variable restriction of H can lose descent: fall back to steepest descent
            H = _gauss_newton_inverse(offsets, rotations, axes, ee_t, ee_r, x, w_pos, w_rot, smooth)
            fresh = True
            for i in range(n):
                d[i] = -g[i] if free[i] else 0.0
        alpha = 1.0
        accepted = False
        xn = x
        fn = f
        gn = g
        dn = dist
        for _ in range(40):
            xn = _clip(x + alpha * d, lo, hi)
            fn, gn, dn = _objective(offsets, rotations, axes, ee_t, ee_r, xn, q_prev, tp, tq,
                                    w_pos, w_rot, smooth)
            decrease = 0.0
            for i in range(n):
                decrease += g[i] * (xn[i] - x[i])
            if fn < f and fn <= f + 1e-4 * decrease:
                accepted = True
                break
            alpha *= 0.5
        it += 1
        if not accepted:
            if fresh:
                break
            H = _gauss_newton_inverse(offsets, rotations, axes, ee_t, ee_r, x, w_pos, w_rot, smooth)
            fresh = True
            continue
        s = xn - x
        y = gn - g
        x = xn
        f = fn
        g = gn
        dist = dn
        if np.max(np.abs(s)) < xtol:
            break
        sy = 0.0
        for i in range(n):
            sy += s[i] * y[i]
        if sy > 1e-18:
            fresh = False
            rho = 1.0 / sy
            Hy = H @ y
            yHy = 0.0
            for i in range(n):
                yHy += y[i] * Hy[i]
            for i in range(n):
                for j in range(n):
                    H[i, j] += (-rho * (Hy[i] * s[j] + s[i] * Hy[j])
                                + (rho * rho * yHy + rho) * s[i] * s[j])
    return x, dist, it


@njit(cache=True, nogil=True)
def _solve_spd6(A, b):
    """In-place Cholesky solve of a 6x6 symmetric positive-definite system."""
    L = np.zeros((6, 6))
    for i in range(6):
        for j in range(i + 1):
            acc = A[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            if i == j:
                L[i, i] = math.sqrt(acc)
            else:
                L[i, j] = acc / L[j, j]
    y = np.empty(6)
    for i in range(6):
        acc = b[i]
        for k in range(i):
            acc -= L[i, k] * y[k]
        y[i] = acc / L[i, i]
    for i in range(5, -1, -1):
        acc = y[i]
        for k in range(i + 1, 6):
            acc -= L[k, i] * y[k]
        y[i] = acc / L[i, i]
    return y


@njit(cache=True, nogil=True)
def _exact(offsets, rotations, axes, ee_t, ee_r, lo, hi, q_prev, tp, tq,
           damping, max_iter, pos_tol, rot_tol):
    """Damped pseudoinverse iteration; returns (q, converged, iterations)."""
    n = q_prev.shape[0]
    x = q_prev.copy()
    A = np.empty((6, 6))
    e = np.empty(6)
    lam2 = damping * damping
    best = math.inf
    stalled = 0
    for it in range(max_iter + 1):
        p, Q, J = _fk_jacobian(offsets, rotations, axes, ee_t, ee_r, x)
        ep = tp - p
        er = _rotation_vector_to(tq, Q)
        pos_err = math.sqrt(ep[0] * ep[0] + ep[1] * ep[1] + ep[2] * ep[2])
        rot_err = math.sqrt(er[0] * er[0] + er[1] * er[1] + er[2] * er[2])
        if pos_err < pos_tol and rot_err < rot_tol:
            return x, True, it
        if it == max_iter:
            break
        # give up once the error has stopped shrinking for STALL_WINDOW iterations
        err = pos_err + rot_err
        if err < best * (1.0 - 1e-6):
            best = err
            stalled = 0
        else:
            stalled += 1
            if stalled >= STALL_WINDOW:
                break
        for r in range(3):
            e[r] = ep[r]
            e[r + 3] = er[r]
        for r in range(6):
            for c in range(6):
                acc = 0.0
                for k in range(n):
                    acc += J[r, k] * J[c, k]
                A[r, c] = acc
            A[r, r] += lam2
        y = _solve_spd6(A, e)
        dq = J.T @ y
        x = _clip(x + dq, lo, hi)
    return q_prev.copy(), False, it


@njit(cache=True, nogil=True)
def _trajectory(offsets, rotations, axes, ee_t, ee_r, lo, hi, q0, tps, tqs, use_exact,
                w_pos, w_rot, smooth, max_iter, ftol, gtol, xtol,
                damping, exact_max_iter, pos_tol, rot_tol):
    T = tps.shape[0]
    out = np.empty((T, q0.shape[0]))
    q = q0.copy()
    for t in range(T):
        if use_exact:
            q, _, _ = _exact(offsets, rotations, axes, ee_t, ee_r, lo, hi, q, tps[t], tqs[t],
                             damping, exact_max_iter, pos_tol, rot_tol)
        else:
            q, _, _ = _bfgs_box(offsets, rotations, axes, ee_t, ee_r, lo, hi, q, q, tps[t], tqs[t],
                                w_pos, w_rot, smooth, max_iter, ftol, gtol, xtol)
        out[t] = q
    return out


# ---------------------------------------------------------------- API


def _check_start(chain: KinematicChain, q_prev) -> np.ndarray:
    q = np.array(chain.check_q(q_prev), dtype=float)
    if not chain.within_limits(q):
        raise ContractError("q_prev must lie within the joint limits")
    return q


def _result(chain, target, q, converged, iterations, settings) -> IkResult:
    q = np.array(q)
    q.setflags(write=False)
    achieved = forward_kinematics(chain, q)
    return IkResult(q, achieved, pose_distance(achieved, target, settings.weights),
                    bool(converged), int(iterations))


def approx_objective(chain: KinematicChain, q, target: Pose, q_prev, settings: IkSettings = IkSettings()):
    """Objective of the approximate solver and its analytic gradient at ``q``."""
    q = chain.check_q(q)
    q_prev = chain.check_q(q_prev)
    w = settings.weights
    f, g, _ = _objective(*chain.arrays, q, q_prev, target.position, target.orientation,
                         w.w_pos, w.w_rot, settings.smoothness)
    return float(f), g


def solve_exact(chain: KinematicChain, target: Pose, q_prev, settings: IkSettings = IkSettings()) -> IkResult:
    q_prev = _check_start(chain, q_prev)
    _count("exact")
    q, converged, iterations = _exact(
        *chain.arrays, chain.lower, chain.upper, q_prev, target.position, target.orientation,
        settings.damping, settings.exact_max_iterations,
        settings.position_tolerance, settings.rotation_tolerance)
    if not converged:
        q = q_prev
    return _result(chain, target, q, converged, iterations, settings)


def _approx_kernel(chain, x0, q_prev, target, settings):
    w = settings.weights
    return _bfgs_box(*chain.arrays, chain.lower, chain.upper, x0, q_prev,
                     target.position, target.orientation, w.w_pos, w.w_rot, settings.smoothness,
                     settings.max_iterations, settings.tolerance, settings.gradient_tolerance,
                     settings.step_tolerance)


def solve_approx(chain: KinematicChain, target: Pose, q_prev, settings: IkSettings = IkSettings()) -> IkResult:
    """Closest in-limit configuration to ``target`` under the weighted metric.

    With ``settings.restarts > 0`` additional starts are drawn uniformly inside
    the limits (seeded by ``settings.restart_seed``) and the best result kept.
    """
    q_prev = _check_start(chain, q_prev)
    _count("approx")
    q, dist, iterations = _approx_kernel(chain, q_prev, q_prev, target, settings)
    best_obj = _objective_value(chain, q, q_prev, target, settings)
    if settings.restarts and dist > settings.tolerance:
        rng = np.random.default_rng(settings.restart_seed)
        for _ in range(settings.restarts):
            start = rng.uniform(chain.lower, chain.upper)
            cand, cand_dist, cand_it = _approx_kernel(chain, start, q_prev, target, settings)
            iterations += cand_it
            cand_obj = _objective_value(chain, cand, q_prev, target, settings)
            if cand_obj < best_obj:
                q, dist, best_obj = cand, cand_dist, cand_obj
            if dist <= settings.tolerance:
                break
    return _result(chain, target, q, dist <= settings.tolerance, iterations, settings)


def _objective_value(chain, q, q_prev, target, settings) -> float:
    w = settings.weights
    f, _, _ = _objective(*chain.arrays, q, q_prev, target.position, target.orientation,
                         w.w_pos, w.w_rot, settings.smoothness)
    return f


def solve(chain: KinematicChain, target: Pose, q_prev, settings: IkSettings = IkSettings(),
          solver: Solver = "approx") -> IkResult:
    if solver == "exact":
        return solve_exact(chain, target, q_prev, settings)
    if solver == "approx":
        return solve_approx(chain, target, q_prev, settings)
    raise ContractError(f"unknown solver {solver!r}")


def solve_trajectory(chain: KinematicChain, targets: Sequence[Pose] | tuple[np.ndarray, np.ndarray], q0,
                     settings: IkSettings = IkSettings(), solver: Solver = "approx") -> np.ndarray:
    """Solve each target in turn, warm-starting from the previous solution.

    ``targets`` is either a sequence of poses or a pair of arrays
    ``(positions (T, 3), unit quaternions (T, 4))``. Returns a (T, n) array.
    Restarts are never used here; continuity comes from the warm start.
    """
    q0 = _check_start(chain, q0)
    if isinstance(targets, tuple) and len(targets) == 2 and isinstance(targets[0], np.ndarray):
        tps = np.ascontiguousarray(targets[0], dtype=float)
        tqs = np.ascontiguousarray(targets[1], dtype=float)
    else:
        targets = list(targets)
        tps = np.array([t.position for t in targets], dtype=float).reshape(-1, 3)
        tqs = np.array([t.orientation for t in targets], dtype=float).reshape(-1, 4)
    if tps.shape[0] == 0 or tps.shape[0] != tqs.shape[0]:
        raise ContractError("targets must be a non-empty sequence")
    if solver not in ("exact", "approx"):
        raise ContractError(f"unknown solver {solver!r}")
    _count(solver, tps.shape[0])
    w = settings.weights
    return _trajectory(*chain.arrays, chain.lower, chain.upper, q0, tps, tqs, solver == "exact",
                       w.w_pos, w.w_rot, settings.smoothness, settings.max_iterations,
                       settings.tolerance, settings.gradient_tolerance, settings.step_tolerance,
                       settings.damping, settings.exact_max_iterations,
                       settings.position_tolerance, settings.rotation_tolerance)


__all__ = [
    "IkResult",
    "IkSettings",
    "approx_objective",
    "call_counts",
    "solve",
    "solve_approx",
    "solve_exact",
    "solve_trajectory",
]
