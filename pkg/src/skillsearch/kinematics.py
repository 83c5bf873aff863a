"""Revolute kinematic chains, forward kinematics, geometric Jacobian and the
weighted pose distance.

A chain is a list of joints. Each joint has a fixed transform from the
previous frame (translation + quaternion) followed by a rotation of ``q_i``
about the joint axis. The end-effector frame is a final fixed transform.

Everything here is immutable; the forward-kinematics kernels operate on
packed arrays cached on the chain at construction time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from numba import njit

from . import config
from .quaternion import (
    IDENTITY,
    _from_axis_angle,
    _hemi,
    _log,
    _mul,
    _mul_conj,
    _normalize,
    _rotate,
    check_unit,
)


class ContractError(ValueError):
    """An argument violates an operation's precondition."""


@dataclass(frozen=True)
class Pose:
    """End-effector pose: position in meters, scalar-first unit quaternion."""

    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: IDENTITY.copy())

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(-1)
        if p.shape != (3,) or not np.all(np.isfinite(p)):
            raise ContractError(f"position must be a finite 3-vector, got {self.position!r}")
        q = np.array(self.orientation, dtype=float).reshape(-1)
        if q.shape != (4,) or not np.all(np.isfinite(q)):
            raise ContractError("orientation must be a finite quaternion")
        norm = float(np.linalg.norm(q))
        if abs(norm - 1.0) > 1e-9:
            raise ContractError(f"orientation must be a unit quaternion (norm {norm!r})")
        p.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    @classmethod
    def from_unnormalized(cls, position, orientation) -> "Pose":
        q = np.asarray(orientation, dtype=float)
        return cls(position, q / np.linalg.norm(q))

    def flipped(self) -> "Pose":
        """Same pose, opposite quaternion sign."""
        return Pose(self.position, -self.orientation)


@dataclass(frozen=True)
class MetricWeights:
    w_pos: float = 1.0
    w_rot: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "w_pos", float(self.w_pos))
        object.__setattr__(self, "w_rot", float(self.w_rot))
        if not (self.w_pos >= 0.0 and self.w_rot >= 0.0 and self.w_pos + self.w_rot > 0.0):
            raise ContractError(f"invalid metric weights w_pos={self.w_pos}, w_rot={self.w_rot}")


@dataclass(frozen=True)
class JointDescriptor:
    translation: np.ndarray
    rotation: np.ndarray
    axis: np.ndarray
    lower: float
    upper: float
    name: str = ""

    def __post_init__(self):
        t = np.array(self.translation, dtype=float)
        r = np.array(self.rotation, dtype=float)
        a = np.array(self.axis, dtype=float)
        if t.shape != (3,) or a.shape != (3,) or r.shape != (4,):
            raise ContractError("joint needs a 3-vector translation and axis and a quaternion rotation")
        if abs(np.linalg.norm(a) - 1.0) > 1e-12:
            raise ContractError(f"joint axis must have unit norm, got {a} (norm {np.linalg.norm(a)!r})")
        if abs(np.linalg.norm(r) - 1.0) > 1e-9:
            raise ContractError("joint rotation must be a unit quaternion")
        if not self.lower < self.upper:
            raise ContractError(f"joint limits must satisfy lower < upper, got [{self.lower}, {self.upper}]")
        for arr, name in ((t, "translation"), (r, "rotation"), (a, "axis")):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "lower", float(self.lower))
        object.__setattr__(self, "upper", float(self.upper))


@dataclass(frozen=True)
class KinematicChain:
    joints: tuple[JointDescriptor, ...]
    ee_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ee_rotation: np.ndarray = field(default_factory=lambda: IDENTITY.copy())
    name: str = ""

    def __post_init__(self):
        joints = tuple(self.joints)
        if len(joints) < 1:
            raise ContractError("a chain needs at least one joint")
        object.__setattr__(self, "joints", joints)
        ee_t = np.array(self.ee_translation, dtype=float)
        ee_r = np.array(self.ee_rotation, dtype=float)
        if ee_t.shape != (3,) or ee_r.shape != (4,) or abs(np.linalg.norm(ee_r) - 1.0) > 1e-9:
            raise ContractError("end-effector transform needs a 3-vector and a unit quaternion")
        packed = {
            "offsets": np.array([j.translation for j in joints]),
            "rotations": np.array([j.rotation for j in joints]),
            "axes": np.array([j.axis for j in joints]),
            "lower": np.array([j.lower for j in joints]),
            "upper": np.array([j.upper for j in joints]),
            "ee_translation": ee_t,
            "ee_rotation": ee_r,
        }
        for key, arr in packed.items():
            arr.setflags(write=False)
            object.__setattr__(self, key, arr)
        pos, _ = _fk(self.offsets, self.rotations, self.axes, ee_t, ee_r, np.zeros(len(joints)))
        if not np.all(np.isfinite(pos)):
            raise ContractError("forward kinematics of the zero configuration is not finite")

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def arrays(self) -> tuple:
        """Packed arrays in kernel argument order."""
        return (self.offsets, self.rotations, self.axes, self.ee_translation, self.ee_rotation)

    def clip(self, q) -> np.ndarray:
        return np.clip(np.asarray(q, dtype=float), self.lower, self.upper)

    def within_limits(self, q) -> bool:
        q = np.asarray(q, dtype=float)
        return bool(np.all(q >= self.lower) and np.all(q <= self.upper))

    def reach_bound(self) -> float:
        """Upper bound on the end-effector distance from the first joint."""
        lengths = [np.linalg.norm(j.translation) for j in self.joints[1:]]
        return float(np.sum(lengths) + np.linalg.norm(self.ee_translation))

    def base_position(self) -> np.ndarray:
        """Position of the first joint, the center of the reachable ball."""
        return np.array(self.joints[0].translation)

    def check_q(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.ndim != 1 or q.shape[0] != self.n_joints:
            raise ContractError(f"expected {self.n_joints} joint values, got shape {q.shape}")
        if not np.all(np.isfinite(q)):
            raise ContractError("joint values must be finite")
        return q


@njit(cache=True)
def _fk(offsets, rotations, axes, ee_t, ee_r, q):
    p = np.zeros(3)
    Q = np.array([1.0, 0.0, 0.0, 0.0])
    for i in range(q.shape[0]):
        p = p + _rotate(Q, offsets[i])
        Q = _mul(_mul(Q, rotations[i]), _from_axis_angle(axes[i], q[i]))
    p = p + _rotate(Q, ee_t)
    Q = _normalize(_mul(Q, ee_r))
    return p, Q


@njit(cache=True)
def _fk_jacobian(offsets, rotations, axes, ee_t, ee_r, q):
    n = q.shape[0]
    joint_pos = np.empty((n, 3))
    joint_axis = np.empty((n, 3))
    p = np.zeros(3)
    Q = np.array([1.0, 0.0, 0.0, 0.0])
    for i in range(n):
        p = p + _rotate(Q, offsets[i])
        Q = _mul(Q, rotations[i])
        joint_pos[i] = p
        joint_axis[i] = _rotate(Q, axes[i])
        Q = _mul(Q, _from_axis_angle(axes[i], q[i]))
    p = p + _rotate(Q, ee_t)
    Q = _normalize(_mul(Q, ee_r))
    J = np.empty((6, n))
    for i in range(n):
        z = joint_axis[i]
        r = p - joint_pos[i]
        J[0, i] = z[1] * r[2] - z[2] * r[1]
        J[1, i] = z[2] * r[0] - z[0] * r[2]
        J[2, i] = z[0] * r[1] - z[1] * r[0]
        J[3, i] = z[0]
        J[4, i] = z[1]
        J[5, i] = z[2]
    return p, Q, J


@njit(cache=True)
def _fk_positions(offsets, rotations, axes, ee_t, ee_r, qs):
    out = np.empty((qs.shape[0], 3))
    for t in range(qs.shape[0]):
        p, _ = _fk(offsets, rotations, axes, ee_t, ee_r, qs[t])
        out[t] = p
    return out


@njit(cache=True)
def _rotation_distance(q1, q2):
    a = math.sqrt(np.sum(_log(_hemi(_mul_conj(q1, q2))) ** 2))
    return min(a, 2.0 * math.pi - a)


@njit(cache=True)
def _pose_distance(p1, q1, p2, q2, w_pos, w_rot):
    dp = p1 - p2
    r = _rotation_distance(q1, q2)
    return w_pos * (dp[0] * dp[0] + dp[1] * dp[1] + dp[2] * dp[2]) + w_rot * r * r


def forward_kinematics(chain: KinematicChain, q) -> Pose:
    q = chain.check_q(q)
    p, Q = _fk(*chain.arrays, q)
    return Pose(p, Q)


def geometric_jacobian(chain: KinematicChain, q) -> np.ndarray:
    """6 x n Jacobian in the base frame: linear velocity rows, then angular."""
    q = chain.check_q(q)
    _, _, J = _fk_jacobian(*chain.arrays, q)
    return J


def fk_positions(chain: KinematicChain, qs) -> np.ndarray:
    """End-effector positions for a (T, n) array of configurations."""
    qs = np.ascontiguousarray(qs, dtype=float)
    if qs.ndim != 2 or qs.shape[1] != chain.n_joints:
        raise ContractError(f"expected a (T, {chain.n_joints}) array, got {qs.shape}")
    return _fk_positions(*chain.arrays, qs)


def pose_distance(p1: Pose, p2: Pose, weights: MetricWeights = MetricWeights()) -> float:
    """``w_pos |dp|^2 + w_rot min(|log(q1 q2*)|, 2 pi - |log(q1 q2*)|)^2``.

    The relative quaternion is taken on the positive hemisphere before the
    logarithm, so ``|log|`` is half the geodesic angle and ``q``/``-q``
    give the same distance.
    """
    return float(_pose_distance(p1.position, p1.orientation, p2.position, p2.orientation,
                                weights.w_pos, weights.w_rot))


def chain_from_dict(data: dict) -> KinematicChain:
    joints_node = config.require(data, "joints", "chain")
    if not isinstance(joints_node, list) or not joints_node:
        config.fail(data, "'joints' must be a non-empty list")
    joints = []
    for k, node in enumerate(joints_node):
        what = f"joint {k}"
        if not isinstance(node, dict):
            config.fail(joints_node, f"{what} must be a mapping")
        limits = config.vector(node, "limits", 2, what)
        axis = config.vector(node, "axis", 3, what)
        rotation = config.vector(node, "rotation", 4, what, default=IDENTITY)
        try:
            joints.append(JointDescriptor(
                translation=config.vector(node, "translation", 3, what),
                rotation=rotation / np.linalg.norm(rotation),
                axis=axis / np.linalg.norm(axis) if np.linalg.norm(axis) > 0 else axis,
                lower=limits[0],
                upper=limits[1],
                name=str(node.get("name", f"joint{k}")),
            ))
        except ContractError as exc:
            config.fail(node, f"{what}: {exc}")
    ee = config.require(data, "end_effector", "chain")
    ee_rot = config.vector(ee, "rotation", 4, "end_effector", default=IDENTITY)
    try:
        return KinematicChain(
            joints=tuple(joints),
            ee_translation=config.vector(ee, "translation", 3, "end_effector"),
            ee_rotation=ee_rot / np.linalg.norm(ee_rot),
            name=str(data.get("name", "")),
        )
    except ContractError as exc:
        config.fail(data, str(exc))


def load_chain(path: str | Path) -> KinematicChain:
    return chain_from_dict(config.load_file(path))


def default_chain() -> KinematicChain:
    """Generic 7-DOF arm ("iiwa-like"): alternating z/y axes, 1.2 m of links."""
    text = resources.files("skillsearch").joinpath("data/iiwa_like.yaml").read_text()
    return chain_from_dict(config.load_text(text, "iiwa_like.yaml"))


def default_chain_path() -> Path:
    return Path(str(resources.files("skillsearch").joinpath("data/iiwa_like.yaml")))


def planar_chain(lengths=(1.0, 1.0), limits=(-math.pi, math.pi)) -> KinematicChain:
    """Planar arm in the xy-plane with z axes; handy for analytic checks."""
    joints = []
    for k, _ in enumerate(lengths):
        offset = [0.0, 0.0, 0.0] if k == 0 else [lengths[k - 1], 0.0, 0.0]
        joints.append(JointDescriptor(offset, IDENTITY, [0.0, 0.0, 1.0], limits[0], limits[1], f"joint{k}"))
    return KinematicChain(tuple(joints), np.array([lengths[-1], 0.0, 0.0]), IDENTITY, "planar")


__all__ = [
    "ContractError",
    "JointDescriptor",
    "KinematicChain",
    "MetricWeights",
    "Pose",
    "check_unit",
    "chain_from_dict",
    "default_chain",
    "fk_positions",
    "forward_kinematics",
    "geometric_jacobian",
    "load_chain",
    "planar_chain",
    "pose_distance",
]
