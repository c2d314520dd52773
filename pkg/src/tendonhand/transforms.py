"""Small rigid-transform helpers (4x4 homogeneous, row-major numpy)."""

from __future__ import annotations

import math

import numpy as np


def identity() -> np.ndarray:
    return np.eye(4)


def translation(x: float, y: float, z: float) -> np.ndarray:
    T = np.eye(4)
    T[:3, 3] = (x, y, z)
    return T


def rot_x(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    T = np.eye(4)
    T[1, 1], T[1, 2] = c, -s
    T[2, 1], T[2, 2] = s, c
    return T


def rot_y(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    T = np.eye(4)
    T[0, 0], T[0, 2] = c, s
    T[2, 0], T[2, 2] = -s, c
    return T


def rot_z(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    T = np.eye(4)
    T[0, 0], T[0, 1] = c, -s
    T[1, 0], T[1, 1] = s, c
    return T


def from_xyz_rpy(xyz, rpy) -> np.ndarray:
    """Fixed-axis roll/pitch/yaw (x, then y, then z) plus translation."""
    r, p, y = rpy
    T = rot_z(y) @ rot_y(p) @ rot_x(r)
    T[:3, 3] = xyz
    return T


def apply(T: np.ndarray, point) -> np.ndarray:
    """Transform a 3-vector point."""
    p = np.asarray(point, dtype=float)
    return T[:3, :3] @ p + T[:3, 3]


def invert(T: np.ndarray) -> np.ndarray:
    R = T[:3, :3]
    out = np.eye(4)
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ T[:3, 3]
    return out


def quat_from_matrix(T: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) from the rotation part of a transform."""
    R = T[:3, :3]
    t = np.trace(R)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(max(R[i, i] - R[j, j] - R[k, k] + 1.0, 0.0)) * 2
        q = [0.0, 0.0, 0.0]
        q[i] = 0.25 * s
        q[j] = (R[j, i] + R[i, j]) / s
        q[k] = (R[k, i] + R[i, k]) / s
        w = (R[k, j] - R[j, k]) / s
        x, y, z = q
    quat = np.array([w, x, y, z])
    return quat / np.linalg.norm(quat)


def matrix_from_quat(quat, xyz=(0.0, 0.0, 0.0)) -> np.ndarray:
    w, x, y, z = np.asarray(quat, dtype=float) / np.linalg.norm(quat)
    T = np.eye(4)
    T[:3, :3] = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
    T[:3, 3] = xyz
    return T


def rotation_angle_2d(T: np.ndarray) -> float:
    """Planar rotation angle of a 3x3 homogeneous 2D transform.

    Convention: positive angle turns the v axis (0, 1) toward the u axis,
    i.e. R(a) @ (sin b, cos b) = (sin(a + b), cos(a + b)).
    """
    return float(np.arctan2(T[0, 1], T[1, 1]))


def planar(angle: float, u: float, v: float) -> np.ndarray:
    """3x3 homogeneous 2D transform, angle per :func:`rotation_angle_2d`."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, s, u], [-s, c, v], [0.0, 0.0, 1.0]])
