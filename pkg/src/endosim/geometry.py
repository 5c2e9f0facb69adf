"""Pinhole camera, rotation helpers and rays.

Camera frame convention: +z points into the scene, +x right, +y down, so that
pixel coordinates (u, v) grow with x and y. All lengths are millimetres.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, DomainError


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DomainError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics for an image resampled by ``factor`` (pixel-centre aligned)."""
        w = max(1, int(round(self.width * factor)))
        h = max(1, int(round(self.height * factor)))
        sx, sy = w / self.width, h / self.height
        return CameraIntrinsics(
            self.fx * sx, self.fy * sy, (self.cx + 0.5) * sx - 0.5, (self.cy + 0.5) * sy - 0.5, w, h
        )

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        n = np.linalg.norm(self.direction)
        if abs(n - 1.0) > 1e-12:
            raise DomainError(f"ray direction must be unit length, got norm {n}")

    def at(self, t):
        return self.origin + np.multiply.outer(t, self.direction)


def backproject(u, v, d, K: CameraIntrinsics) -> np.ndarray:
    """Lift pixel(s) with z-depth ``d`` to camera-frame points, shape (..., 3).

    Scalar and array inputs broadcast; the returned point is d * K^-1 [u, v, 1].
    """
    u, v, d = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float), np.asarray(d, float))
    if np.any(d <= 0):
        raise DomainError("depth must be positive")
    x = d * (u - K.cx) / K.fx
    y = d * (v - K.cy) / K.fy
    return np.stack([x, y, d], axis=-1)


def project(x, K: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of camera-frame point(s) (..., 3) to pixels (..., 2)."""
    x = np.asarray(x, float)
    z = x[..., 2]
    if np.any(z <= 0):
        raise BehindCameraError("point lies on or behind the image plane")
    return np.stack([K.fx * x[..., 0] / z + K.cx, K.fy * x[..., 1] / z + K.cy], axis=-1)


def pixel_rays(K: CameraIntrinsics) -> np.ndarray:
    """Unit ray directions through every pixel centre, shape (H, W, 3)."""
    v, u = np.mgrid[0:K.height, 0:K.width].astype(float)
    d = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def is_rotation(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, float)
    return (R.shape == (3, 3)
            and np.allclose(R.T @ R, np.eye(3), atol=tol)
            and abs(np.linalg.det(R) - 1.0) <= tol)


def check_rotation(R, tol: float = 1e-9) -> np.ndarray:
    R = np.asarray(R, float)
    if not is_rotation(R, tol):
        raise DomainError("matrix is not a proper rotation")
    return R


def geodesic_angle(Ra, Rb) -> float:
    """Angle in [0, pi] of the relative rotation Ra^T Rb."""
    Ra = check_rotation(Ra)
    Rb = check_rotation(Rb)
    c = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def quat_to_matrix(q) -> np.ndarray:
    """Unit quaternion(s) (w, x, y, z) to rotation matrices, shape (..., 3, 3)."""
    q = np.asarray(q, float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - z * w)
    R[..., 0, 2] = 2 * (x * z + y * w)
    R[..., 1, 0] = 2 * (x * y + z * w)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - x * w)
    R[..., 2, 0] = 2 * (x * z - y * w)
    R[..., 2, 1] = 2 * (y * z + x * w)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def axis_angle(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about ``axis`` by ``angle`` radians."""
    k = np.asarray(axis, float)
    k = k / np.linalg.norm(k)
    Kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * Kx + (1 - np.cos(angle)) * (Kx @ Kx)
