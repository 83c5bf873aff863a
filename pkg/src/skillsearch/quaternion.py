"""Unit quaternion algebra.

Conventions: scalar first ``(w, x, y, z)``, Hamilton product, a quaternion
``q`` rotates a vector ``v`` as ``q v q*``.

``log`` returns the *half-angle* rotation vector: for
``q = (cos(theta/2), u sin(theta/2))`` it gives ``u * theta / 2``. Its norm
lies in ``[0, pi]``; ``exp`` is the inverse on vectors of norm below ``pi``.

The underscored functions are numba kernels used by the kinematics and IK
inner loops. They skip validation; the public wrappers check their input.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])
_SERIES_THRESHOLD = 1e-8
UNIT_TOLERANCE = 1e-6


@njit(cache=True)
def _mul(a, b):
    out = np.empty(4)
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]
    return out


@njit(cache=True)
def _conj(q):
    out = np.empty(4)
    out[0] = q[0]
    out[1] = -q[1]
    out[2] = -q[2]
    out[3] = -q[3]
    return out


@njit(cache=True)
def _mul_conj(a, b):
    """``a * conj(b)`` without the temporary."""
    return _mul(a, _conj(b))


@njit(cache=True)
def _hemi(q):
    """Representative with non-negative scalar part (shortest arc)."""
    if q[0] < 0.0:
        return -q
    return q.copy()


@njit(cache=True)
def _log(q):
    out = np.zeros(3)
    s = math.sqrt(q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    w = q[0]
    if s < _SERIES_THRESHOLD:
        if w > 0.0:
            # atan(s/w)/s = (1 - (s/w)^2/3 + ...)/w
            r = s / w
            factor = (1.0 - r * r / 3.0) / w
        elif s == 0.0:
            # q = -1: a full turn, axis arbitrary
            out[0] = math.pi
            return out
        else:
            factor = math.atan2(s, w) / s
    else:
        factor = math.atan2(s, w) / s
    out[0] = factor * q[1]
    out[1] = factor * q[2]
    out[2] = factor * q[3]
    return out


@njit(cache=True)
def _exp(v):
    out = np.empty(4)
    a = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    if a < _SERIES_THRESHOLD:
        k = 1.0 - a * a / 6.0
    else:
        k = math.sin(a) / a
    out[0] = math.cos(a)
    out[1] = k * v[0]
    out[2] = k * v[1]
    out[3] = k * v[2]
    return out


@njit(cache=True)
def _from_axis_angle(axis, angle):
    out = np.empty(4)
    h = 0.5 * angle
    s = math.sin(h)
    out[0] = math.cos(h)
    out[1] = s * axis[0]
    out[2] = s * axis[1]
    out[3] = s * axis[2]
    return out


@njit(cache=True)
def _rotate(q, v):
    # v' = v + 2 w (u x v) + 2 u x (u x v)
    w = q[0]
    ux, uy, uz = q[1], q[2], q[3]
    tx = 2.0 * (uy * v[2] - uz * v[1])
    ty = 2.0 * (uz * v[0] - ux * v[2])
    tz = 2.0 * (ux * v[1] - uy * v[0])
    out = np.empty(3)
    out[0] = v[0] + w * tx + (uy * tz - uz * ty)
    out[1] = v[1] + w * ty + (uz * tx - ux * tz)
    out[2] = v[2] + w * tz + (ux * ty - uy * tx)
    return out


@njit(cache=True)
def _normalize(q):
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    return q / n


@njit(cache=True)
def _rotation_vector_to(target, current):
    """Rotation vector ``phi`` (norm <= pi) with ``exp(phi/2) * current = target``."""
    return 2.0 * _log(_hemi(_mul_conj(target, current)))


def _as_quat(q) -> np.ndarray:
    # always a fresh writable array: read-only inputs (Pose fields) would
    # otherwise make numba compile a second specialization of every kernel
    q = np.array(q, dtype=float)
    if q.shape != (4,):
        raise ValueError(f"quaternion must have 4 components, got shape {q.shape}")
    return q


def check_unit(q, tol: float = UNIT_TOLERANCE) -> np.ndarray:
    q = _as_quat(q)
    norm = float(np.linalg.norm(q))
    if not np.isfinite(norm) or abs(norm - 1.0) > tol:
        raise ValueError(f"quaternion {q} is not unit (norm {norm})")
    return q


def multiply(a, b) -> np.ndarray:
    return _mul(_as_quat(a), _as_quat(b))


def conjugate(q) -> np.ndarray:
    return _conj(_as_quat(q))


def normalize(q) -> np.ndarray:
    q = _as_quat(q)
    norm = np.linalg.norm(q)
    if norm == 0.0 or not np.isfinite(norm):
        raise ValueError("cannot normalize a zero or non-finite quaternion")
    return q / norm


def quaternion_log(q) -> np.ndarray:
    """Half-angle rotation vector of a unit quaternion.

    Identity maps to zero. ``(-1, 0, 0, 0)`` maps to ``(pi, 0, 0)``.
    """
    return _log(check_unit(q))


def quaternion_exp(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {v.shape}")
    return _exp(v)


def from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(axis)
    if norm == 0.0:
        raise ValueError("rotation axis must be nonzero")
    return _from_axis_angle(axis / norm, float(angle))


def rotate(q, v) -> np.ndarray:
    return _rotate(_as_quat(q), np.array(v, dtype=float))


def angle_between(a, b) -> float:
    """Geodesic rotation angle in ``[0, pi]`` between two orientations."""
    return float(np.linalg.norm(_rotation_vector_to(check_unit(a), check_unit(b))))


def to_matrix(q) -> np.ndarray:
    w, x, y, z = check_unit(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def align_signs(quats) -> np.ndarray:
    """Flip signs along a sequence so consecutive quaternions lie on one hemisphere."""
    quats = np.array(quats, dtype=float)
    for t in range(1, len(quats)):
        if np.dot(quats[t], quats[t - 1]) < 0.0:
            quats[t] = -quats[t]
    return quats
