"""Piecewise-constant-curvature forward model of a flexible instrument.

The instrument is a chain of three pieces measured from its mount:

* shoulder: straight, length ``insertion``, yawed by ``gamma`` in the local
  XOZ plane and rolled by ``delta`` about the mount axis (+z);
* proximal arc: total bend ``alpha`` over the proximal length;
* distal arc: total bend ``beta`` over the distal length.

Both arcs bend in the same (rolled) XOZ plane. Arcs are evaluated with the
closed-form constant-curvature expressions written so that zero bend reduces
smoothly to a straight segment.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .geometry import rot_y, rot_z


@dataclass(frozen=True)
class RobotState:
    alpha: float
    beta: float
    gamma: float
    delta: float
    insertion: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= np.pi:
            raise DomainError(f"alpha must lie in [0, pi], got {self.alpha}")
        if not 0.0 <= self.beta <= np.pi:
            raise DomainError(f"beta must lie in [0, pi], got {self.beta}")
        if not -np.pi / 2 <= self.gamma <= np.pi / 2:
            raise DomainError(f"gamma must lie in [-pi/2, pi/2], got {self.gamma}")
        if not -np.pi < self.delta <= np.pi:
            raise DomainError(f"delta must lie in (-pi, pi], got {self.delta}")
        if not self.insertion >= 0.0:
            raise DomainError("insertion must be non-negative")

    @property
    def angles(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma, self.delta])

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma,
                "delta": self.delta, "insertion": self.insertion}

    @classmethod
    def from_dict(cls, d: dict) -> "RobotState":
        return cls(float(d["alpha"]), float(d["beta"]), float(d["gamma"]),
                   float(d["delta"]), float(d.get("insertion", 0.0)))


def wrap_angle(a):
    """Map angle(s) into (-pi, pi]."""
    w = np.mod(np.asarray(a, float) + np.pi, 2 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class SegmentLengths:
    shoulder: float = 30.0
    proximal: float = 20.0
    distal: float = 15.0
    radius: float = 1.5

    def __post_init__(self):
        if min(self.shoulder, self.proximal, self.distal, self.radius) <= 0:
            raise DomainError("segment lengths and radius must be positive")

    def to_dict(self) -> dict:
        return {"shoulder": self.shoulder, "proximal": self.proximal,
                "distal": self.distal, "radius": self.radius}

    @classmethod
    def from_dict(cls, d: dict) -> "SegmentLengths":
        return cls(**{k: float(d[k]) for k in ("shoulder", "proximal", "distal", "radius")})


@dataclass(frozen=True)
class Mount:
    """Pose of the instrument base in the camera frame; the base axis is local +z."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def to_dict(self) -> dict:
        return {"position": [float(x) for x in self.position],
                "rotation": [[float(x) for x in row] for row in self.rotation]}

    @classmethod
    def from_dict(cls, d: dict) -> "Mount":
        return cls(np.asarray(d["position"], float), np.asarray(d["rotation"], float))


@dataclass(frozen=True)
class Centerline:
    points: np.ndarray    # (N, 3)
    frames: np.ndarray    # (N, 3, 3); column 2 is the tangent
    arc: np.ndarray       # (N,) cumulative arc length
    segment: np.ndarray   # (N,) 0 shoulder, 1 proximal, 2 distal

    @property
    def tangents(self) -> np.ndarray:
        return self.frames[:, :, 2]

    def __len__(self):
        return len(self.points)

    def polyline_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())

    def transformed(self, mount: Mount) -> "Centerline":
        R, p = np.asarray(mount.rotation, float), np.asarray(mount.position, float)
        return Centerline(self.points @ R.T + p, R @ self.frames, self.arc, self.segment)


def _arc(theta: float, length: float, s: np.ndarray):
    """In-plane position (x, z) and frame angle at arc lengths ``s`` of one arc."""
    x = theta * s / length
    # (1 - cos x)/kappa = s (x/2) sinc^2(x / 2pi); sin(x)/kappa = s sinc(x / pi)
    px = s * (x / 2) * np.sinc(x / (2 * np.pi)) ** 2
    pz = s * np.sinc(x / np.pi)
    return px, pz, x


def forward_shape(state: RobotState, lengths: SegmentLengths, samples_per_segment: int = 64,
                  mount: Mount | None = None) -> Centerline:
    """Sample the instrument centerline uniformly in arc length.

    Each non-empty segment contributes ``samples_per_segment`` samples including its
    endpoints; joints are shared. Returned in the mount frame unless ``mount`` is given.
    """
    if samples_per_segment < 2:
        raise DomainError("samples_per_segment must be >= 2")
    R = rot_z(state.delta) @ rot_y(state.gamma)
    p = np.zeros(3)
    pts, frames, arcs, segs = [p.copy()], [R.copy()], [0.0], [0]
    arc0 = 0.0
    pieces = ((0.0, state.insertion), (state.alpha, lengths.proximal), (state.beta, lengths.distal))
    for k, (theta, length) in enumerate(pieces):
        if length <= 0:
            continue
        s = np.linspace(0.0, length, samples_per_segment)[1:]
        px, pz, ang = _arc(theta, length, s)
        local = np.stack([px, np.zeros_like(s), pz], axis=1)
        seg_pts = p + local @ R.T
        c, sn = np.cos(ang), np.sin(ang)
        # R @ rot_y(ang) for every sample
        ry = np.zeros((len(s), 3, 3))
        ry[:, 0, 0] = c
        ry[:, 0, 2] = sn
        ry[:, 1, 1] = 1.0
        ry[:, 2, 0] = -sn
        ry[:, 2, 2] = c
        seg_frames = R @ ry
        pts.extend(seg_pts)
        frames.extend(seg_frames)
        arcs.extend(arc0 + s)
        segs.extend([k] * len(s))
        p = seg_pts[-1]
        R = seg_frames[-1]
        arc0 += length
    line = Centerline(np.array(pts), np.array(frames), np.array(arcs), np.array(segs))
    return line.transformed(mount) if mount is not None else line


def tip_pose(state: RobotState, lengths: SegmentLengths, mount: Mount | None = None):
    """Tip position and frame; identical to the last centerline sample."""
    line = forward_shape(state, lengths, 2, mount)
    return line.points[-1], line.frames[-1]


@dataclass(frozen=True)
class CapsuleChain:
    a: np.ndarray  # (M, 3) segment starts
    b: np.ndarray  # (M, 3) segment ends
    radius: float

    def __len__(self):
        return len(self.a)

    def distance(self, x) -> np.ndarray:
        """Signed distance from point(s) (..., 3) to the capsule union surface."""
        x = np.asarray(x, float)[..., None, :]
        ab = self.b - self.a
        denom = np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300)
        t = np.clip(np.einsum("...ij,ij->...i", x - self.a, ab) / denom, 0.0, 1.0)
        closest = self.a + t[..., None] * ab
        d = np.linalg.norm(x - closest, axis=-1).min(axis=-1)
        return d - self.radius


def capsule_chain(centerline: Centerline, radius: float) -> CapsuleChain:
    """One capsule per consecutive pair of centerline samples."""
    if len(centerline) < 2:
        raise DomainError("need at least two centerline samples")
    if radius <= 0:
        raise DomainError("radius must be positive")
    return CapsuleChain(centerline.points[:-1].copy(), centerline.points[1:].copy(), float(radius))
