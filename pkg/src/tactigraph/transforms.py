"""Rigid transforms as 4x4 homogeneous matrices."""

from __future__ import annotations

import numpy as np


def identity() -> np.ndarray:
    return np.eye(4)


def translation(x: float, y: float, z: float) -> np.ndarray:
    T = np.eye(4)
    T[:3, 3] = (x, y, z)
    return T


def axis_angle(axis, angle: float) -> np.ndarray:
    """Rotation matrix (3x3) about a unit axis, Rodrigues' formula."""
    k = np.asarray(axis, dtype=float)
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    s, c = np.sin(angle), np.cos(angle)
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def rotation(axis, angle: float) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = axis_angle(axis, angle)
    return T


def compose(*transforms: np.ndarray) -> np.ndarray:
    out = np.eye(4)
    for T in transforms:
        out = out @ T
    return out


def apply(T: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Apply a rigid transform to an (n, 3) array of points."""
    return points @ T[:3, :3].T + T[:3, 3]


def random_rigid(rng: np.random.Generator, max_translation: float = 1.0) -> np.ndarray:
    """Uniformly random rotation (via a normalized quaternion) plus a bounded translation."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    R = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = rng.uniform(-max_translation, max_translation, size=3)
    return T


def is_rigid(T, tol: float = 1e-9) -> bool:
    T = np.asarray(T, dtype=float)
    if T.shape != (4, 4):
        return False
    R = T[:3, :3]
    return (
        np.allclose(R.T @ R, np.eye(3), atol=tol)
        and abs(np.linalg.det(R) - 1.0) <= tol
        and np.allclose(T[3], (0.0, 0.0, 0.0, 1.0), atol=tol)
    )
