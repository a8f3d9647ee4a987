"""Quaternion and rotation-matrix algebra on SO(3).

Conventions used throughout the package:

- Quaternions are stored scalar-first, ``(q0, q1, q2, q3)``.
- ``quat_to_rot(Q)`` maps body-frame vectors into the inertial frame, so a
  constant inertial direction ``r`` is seen in the body as ``b = R.T @ r``.
- Euler angles follow the aerospace Z-Y-X sequence (yaw, pitch, roll) and are
  reported in degrees.

All functions broadcast over leading dimensions where that is cheap to do,
so batched trajectories can share the same code path.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import ArrayLike, NDArray

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])
GIMBAL_TOL = 1e-6


class GimbalLockError(ValueError):
    """Pitch is within ``GIMBAL_TOL`` rad of +-90 degrees."""


def skew(v: ArrayLike) -> NDArray[np.float64]:
    """Skew-symmetric matrix ``S(v)`` with ``S(v) @ y == cross(v, y)``."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def quat_normalize(q: ArrayLike) -> NDArray[np.float64]:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_inv(q: ArrayLike) -> NDArray[np.float64]:
    """Inverse of a unit quaternion (its conjugate)."""
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_mul(p: ArrayLike, q: ArrayLike, normalize: bool = True) -> NDArray[np.float64]:
    """Hamilton product ``p ⊙ q``, renormalized unless ``normalize=False``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    p0, pv = p[..., :1], p[..., 1:]
    q0, qv = q[..., :1], q[..., 1:]
    scalar = p0 * q0 - np.sum(pv * qv, axis=-1, keepdims=True)
    vector = p0 * qv + q0 * pv + np.cross(pv, qv)
    out = np.concatenate([scalar, vector], axis=-1)
    return quat_normalize(out) if normalize else out


def quat_to_rot(q: ArrayLike) -> NDArray[np.float64]:
    """Euler-Rodrigues map ``R(Q) = I + 2 q0 S(q) + 2 S(q)^2``."""
    q = np.asarray(q, dtype=float)
    s = skew(q[..., 1:])
    return np.eye(3) + 2.0 * q[..., 0, None, None] * s + 2.0 * s @ s


def rot_to_quat(R: ArrayLike) -> NDArray[np.float64]:
    """Inverse of :func:`quat_to_rot` with the sign fixed so that ``q0 >= 0``.

    Uses Shepperd's method: the largest of the four squared components is
    recovered from the diagonal, the other three from off-diagonal sums.
    """
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    diag = np.array([tr, R[0, 0], R[1, 1], R[2, 2]])
    i = int(np.argmax(diag))
    if i == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif i == 1:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif i == 2:
        s = 2.0 * np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = quat_normalize(q)
    return -q if q[0] < 0.0 else q


def quat_derivative(q: ArrayLike, omega: ArrayLike) -> NDArray[np.float64]:
    """``Q̇ = ½ Q ⊙ (0, ω)`` with ``ω`` expressed in the body frame."""
    q = np.asarray(q, dtype=float)
    omega = np.asarray(omega, dtype=float)
    q0, qv = q[..., :1], q[..., 1:]
    d0 = -0.5 * np.sum(qv * omega, axis=-1, keepdims=True)
    dv = 0.5 * (q0 * omega + np.cross(qv, omega))
    return np.concatenate([d0, dv], axis=-1)


def body_vector_derivative(b: ArrayLike, omega: ArrayLike) -> NDArray[np.float64]:
    """Rate of a constant inertial direction seen from the body, ``-S(ω) b``."""
    return -np.cross(omega, b)


def attitude_angle_error(qa: ArrayLike, qb: ArrayLike) -> float | NDArray[np.float64]:
    """Rotation angle (rad, in ``[0, pi]``) between two attitudes."""
    d = quat_mul(qa, quat_inv(qb))
    return 2.0 * np.arccos(np.clip(np.abs(d[..., 0]), 0.0, 1.0))


def euler_to_quat(roll: float, pitch: float, yaw: float) -> NDArray[np.float64]:
    """Z-Y-X Euler angles in degrees to a unit quaternion with ``q0 >= 0``."""
    hr, hp, hy = np.radians([roll, pitch, yaw]) / 2.0
    cr, sr = np.cos(hr), np.sin(hr)
    cp, sp = np.cos(hp), np.sin(hp)
    cy, sy = np.cos(hy), np.sin(hy)
    q = np.array(
        [
            cy * cp * cr + sy * sp * sr,
            cy * cp * sr - sy * sp * cr,
            cy * sp * cr + sy * cp * sr,
            sy * cp * cr - cy * sp * sr,
        ]
    )
    return -q if q[0] < 0.0 else q


def quat_to_euler(q: ArrayLike) -> NDArray[np.float64]:
    """Unit quaternion to ``(roll, pitch, yaw)`` in degrees.

    Raises:
        GimbalLockError: if pitch is within ``GIMBAL_TOL`` rad of +-90 deg.
    """
    q0, q1, q2, q3 = np.asarray(q, dtype=float)
    sinp = np.clip(2.0 * (q0 * q2 - q3 * q1), -1.0, 1.0)
    pitch = np.arcsin(sinp)
    if abs(abs(pitch) - np.pi / 2.0) < GIMBAL_TOL:
        raise GimbalLockError(f"pitch {np.degrees(pitch):.6f} deg is at gimbal lock")
    roll = np.arctan2(2.0 * (q0 * q1 + q2 * q3), 1.0 - 2.0 * (q1 * q1 + q2 * q2))
    yaw = np.arctan2(2.0 * (q0 * q3 + q1 * q2), 1.0 - 2.0 * (q2 * q2 + q3 * q3))
    angles = np.degrees([roll, pitch, yaw])
    # arctan2 returns -180 for the (-180, 180] boundary case
    angles[[0, 2]] = np.where(angles[[0, 2]] <= -180.0, angles[[0, 2]] + 360.0, angles[[0, 2]])
    return angles


def random_quaternion(rng: np.random.Generator, size: int | None = None) -> NDArray[np.float64]:
    """Uniform sample on the unit 3-sphere (normalized 4-D Gaussian)."""
    shape = (4,) if size is None else (size, 4)
    return quat_normalize(rng.standard_normal(shape))


def random_rotation(rng: np.random.Generator) -> NDArray[np.float64]:
    return quat_to_rot(random_quaternion(rng))
