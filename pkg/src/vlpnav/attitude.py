"""Quaternion and direction-cosine-matrix algebra.

Conventions used throughout the package:

* Quaternions are Hamilton, stored as ``[w, x, y, z]`` numpy arrays.
* ``q`` encoding the attitude of frame ``v`` relative to frame ``u``
  rotates v-frame vectors into the u-frame: ``x_u = quat_to_dcm(q) @ x_v``.
* Attitude errors are local (right) perturbations applied in the child
  frame: ``q <- q ⊗ [1, dphi / 2]``.  The equivalent parent-frame angle
  is ``dphi_u = -dcm(q) @ dphi``.
* Euler angles are intrinsic z-y-x (yaw, pitch, roll):
  ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
"""

from __future__ import annotations

import numpy as np

#: Tolerance on the unit-norm invariant for quaternions entering dcm
#: conversions; inputs further from unit norm raise.
QUAT_NORM_TOL = 1e-6


class InvalidQuaternionError(ValueError):
    """Raised when a quaternion argument is too far from unit norm."""


def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q) -> np.ndarray:
    """Scale ``q`` to unit norm. Preserves sign (no canonicalization)."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise InvalidQuaternionError("cannot normalize a near-zero quaternion")
    return q / n


def quat_conjugate(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product ``a ⊗ b``, renormalized."""
    w1, x1, y1, z1 = np.asarray(a, dtype=float)
    w2, x2, y2, z2 = np.asarray(b, dtype=float)
    out = np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )
    return quat_normalize(out)


def _check_unit(q: np.ndarray) -> np.ndarray:
    if abs(np.linalg.norm(q) - 1.0) > QUAT_NORM_TOL:
        raise InvalidQuaternionError(
            f"quaternion norm {np.linalg.norm(q):.9f} deviates more than {QUAT_NORM_TOL}"
        )
    return q


def quat_to_dcm(q) -> np.ndarray:
    """Rotation matrix of ``q``; column j is the image of child axis j.

    The result maps child-frame (v) vectors into the parent frame (u).
    """
    q = _check_unit(np.asarray(q, dtype=float))
    w, x, y, z = q
    return np.array(
        [
            [w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z],
        ]
    )


def dcm_to_quat(R) -> np.ndarray:
    """Quaternion of a proper-orthogonal matrix (Shepperd), with w >= 0."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    if q[0] < 0.0:
        q = -q
    return quat_normalize(q)


def apply_small_angle(q, dphi) -> np.ndarray:
    """Right-perturb ``q`` by the small rotation vector ``dphi`` (rad).

    Returns ``q ⊗ [1, dphi / 2]`` normalized.  Accurate to third order in
    ``|dphi|``; use :func:`quat_exp` for large angles.
    """
    dphi = np.asarray(dphi, dtype=float)
    dq = np.concatenate(([1.0], 0.5 * dphi))
    return quat_multiply(q, dq)


def quat_exp(phi) -> np.ndarray:
    """Exact axis-angle exponential: rotation vector ``phi`` to quaternion."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    if angle < 1e-12:
        return quat_normalize(np.concatenate(([1.0], 0.5 * phi)))
    axis = phi / angle
    half = 0.5 * angle
    return np.concatenate(([np.cos(half)], np.sin(half) * axis))


def quat_log(q) -> np.ndarray:
    """Rotation vector of ``q`` (inverse of :func:`quat_exp`), in (-pi, pi]."""
    q = quat_normalize(q)
    if q[0] < 0.0:
        q = -q
    vec = q[1:]
    sin_half = np.linalg.norm(vec)
    if sin_half < 1e-12:
        return 2.0 * vec
    half = np.arctan2(sin_half, q[0])
    return (2.0 * half / sin_half) * vec


def skew(v) -> np.ndarray:
    """Antisymmetric matrix with ``skew(v) @ w == cross(v, w)``."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_left(q) -> np.ndarray:
    """4x4 left-product matrix: ``quat_multiply(q, p) == quat_left(q) @ p``."""
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array(
        [
            [w, -x, -y, -z],
            [x, w, -z, y],
            [y, z, w, -x],
            [z, -y, x, w],
        ]
    )


def quat_right(q) -> np.ndarray:
    """4x4 right-product matrix: ``quat_multiply(p, q) == quat_right(q) @ p``."""
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array(
        [
            [w, -x, -y, -z],
            [x, w, z, -y],
            [y, -z, w, x],
            [z, y, -x, w],
        ]
    )


def so3_right_jacobian(phi) -> np.ndarray:
    """Right Jacobian of SO(3): ``exp(phi + d) ≈ exp(phi) exp(Jr(phi) d)``."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    S = skew(phi)
    if angle < 1e-6:
        return np.eye(3) - 0.5 * S + (S @ S) / 6.0
    return (
        np.eye(3)
        - ((1.0 - np.cos(angle)) / angle**2) * S
        + ((angle - np.sin(angle)) / angle**3) * (S @ S)
    )


def quat_from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Quaternion of intrinsic z-y-x Euler angles (radians)."""
    cr, sr = np.cos(0.5 * roll), np.sin(0.5 * roll)
    cp, sp = np.cos(0.5 * pitch), np.sin(0.5 * pitch)
    cy, sy = np.cos(0.5 * yaw), np.sin(0.5 * yaw)
    return np.array(
        [
            cy * cp * cr + sy * sp * sr,
            cy * cp * sr - sy * sp * cr,
            cy * sp * cr + sy * cp * sr,
            sy * cp * cr - cy * sp * sr,
        ]
    )


def euler_from_quat(q) -> tuple[float, float, float]:
    """(roll, pitch, yaw) in radians of ``q``, z-y-x convention."""
    R = quat_to_dcm(q)
    pitch = -np.arcsin(np.clip(R[2, 0], -1.0, 1.0))
    roll = np.arctan2(R[2, 1], R[2, 2])
    yaw = np.arctan2(R[1, 0], R[0, 0])
    return float(roll), float(pitch), float(yaw)
