"""Scene description: tissue surfaces, instruments, light and exposure constants."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DomainError
from .kinematics import CapsuleChain, Mount, RobotState, SegmentLengths, capsule_chain, forward_shape

# lateral offsets of the two tool channels from the optical axis, mm
PORT_OFFSET = 4.0


def default_mounts() -> dict[str, Mount]:
    return {
        "left": Mount(np.array([-PORT_OFFSET, 0.0, 0.0]), np.eye(3)),
        "right": Mount(np.array([PORT_OFFSET, 0.0, 0.0]), np.eye(3)),
    }


@dataclass(frozen=True)
class Plane:
    """Infinite plane through ``point`` with normal ``normal`` (a test primitive)."""

    point: np.ndarray
    normal: np.ndarray

    def intersect(self, origins: np.ndarray, dirs: np.ndarray):
        n = np.asarray(self.normal, float)
        n = n / np.linalg.norm(n)
        dn = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((np.asarray(self.point, float) - origins) @ n) / dn
        t = np.where((np.abs(dn) > 1e-15) & (t > 0), t, np.inf)
        normals = np.broadcast_to(n, dirs.shape).copy()
        return t, normals

    def contains_camera(self, origin) -> bool:
        return True


@dataclass(frozen=True)
class Lumen:
    """Procedural endoluminal tube, closed by a bumpy end wall.

    The wall is the zero level set of ``field``, which is positive inside.
    The tube cross-section at depth z is a circle of radius ``radius(z)`` around
    the spline axis point ``(cx(z), cy(z))``, displaced by a sum of 3D sinusoidal
    bumps; the end wall at ``end_depth`` is blended in with a smooth minimum.
    """

    radius: float = 12.0
    fold_amplitude: float = 0.05
    fold_period: float = 16.0
    fold_phase: float = 0.0
    axis_z: tuple = (0.0, 20.0, 40.0, 60.0, 80.0)
    axis_xy: tuple = ((0.0, 0.0),) * 5
    bump_waves: tuple = ()     # rows of (wx, wy, wz, phase, amplitude)
    end_depth: float = 55.0
    end_waves: tuple = ()      # rows of (wx, wy, phase, amplitude)
    blend: float = 6.0
    step_floor: float = 0.05
    tolerance: float = 1e-5

    def __post_init__(self):
        if self.radius <= 0 or self.end_depth <= 0:
            raise DomainError("lumen radius and end depth must be positive")
        object.__setattr__(self, "_axis", CubicSpline(np.asarray(self.axis_z, float),
                                                      np.asarray(self.axis_xy, float), axis=0))
        zz = np.linspace(self.axis_z[0], self.axis_z[-1], 2001)
        slope = np.linalg.norm(self._axis(zz, 1), axis=1).max()
        bw = np.asarray(self.bump_waves, float).reshape(-1, 5)
        ew = np.asarray(self.end_waves, float).reshape(-1, 4)
        lip_tube = (np.sqrt(1 + slope ** 2)
                    + self.radius * self.fold_amplitude * 2 * np.pi / self.fold_period
                    + np.sum(np.abs(bw[:, 4]) * np.linalg.norm(bw[:, :3], axis=1)))
        lip_end = 1.0 + np.sum(np.abs(ew[:, 3]) * np.linalg.norm(ew[:, :2], axis=1))
        object.__setattr__(self, "_bw", bw)
        object.__setattr__(self, "_ew", ew)
        object.__setattr__(self, "lipschitz", float(max(lip_tube, lip_end)))

    @classmethod
    def random(cls, seed: int, radius_range=(11.0, 14.0), end_range=(45.0, 65.0)) -> "Lumen":
        rng = np.random.default_rng(seed)
        radius = rng.uniform(*radius_range)
        end = rng.uniform(*end_range)
        z = np.linspace(0.0, end + 25.0, 6)
        xy = rng.normal(0.0, 2.0, size=(6, 2))
        xy[0] = 0.0
        waves = []
        for _ in range(6):
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            k = 2 * np.pi / rng.uniform(7.0, 16.0)
            waves.append((*(k * direction), rng.uniform(0, 2 * np.pi), rng.uniform(0.15, 0.5)))
        end_waves = []
        for _ in range(3):
            ang = rng.uniform(0, 2 * np.pi)
            k = 2 * np.pi / rng.uniform(10.0, 25.0)
            end_waves.append((k * np.cos(ang), k * np.sin(ang), rng.uniform(0, 2 * np.pi),
                              rng.uniform(0.5, 2.0)))
        return cls(radius=radius, fold_amplitude=rng.uniform(0.03, 0.08),
                   fold_period=rng.uniform(12.0, 20.0), fold_phase=rng.uniform(0, 2 * np.pi),
                   axis_z=tuple(z), axis_xy=tuple(map(tuple, xy)), bump_waves=tuple(map(tuple, waves)),
                   end_depth=end, end_waves=tuple(map(tuple, end_waves)))

    def to_dict(self) -> dict:
        return {
            "radius": self.radius, "fold_amplitude": self.fold_amplitude,
            "fold_period": self.fold_period, "fold_phase": self.fold_phase,
            "axis_z": list(self.axis_z), "axis_xy": [list(p) for p in self.axis_xy],
            "bump_waves": [list(w) for w in self.bump_waves], "end_depth": self.end_depth,
            "end_waves": [list(w) for w in self.end_waves], "blend": self.blend,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Lumen":
        return cls(radius=d["radius"], fold_amplitude=d["fold_amplitude"],
                   fold_period=d["fold_period"], fold_phase=d["fold_phase"],
                   axis_z=tuple(d["axis_z"]), axis_xy=tuple(map(tuple, d["axis_xy"])),
                   bump_waves=tuple(map(tuple, d["bump_waves"])), end_depth=d["end_depth"],
                   end_waves=tuple(map(tuple, d["end_waves"])), blend=d["blend"])

    def radius_at(self, z):
        return self.radius * (1 + self.fold_amplitude * np.sin(2 * np.pi * z / self.fold_period
                                                                 + self.fold_phase))

    def field(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, float)
        z = x[..., 2]
        c = self._axis(np.clip(z, self.axis_z[0], self.axis_z[-1]))
        rho = np.hypot(x[..., 0] - c[..., 0], x[..., 1] - c[..., 1])
        bump = np.zeros_like(z)
        for wx, wy, wz, ph, amp in self._bw:
            bump += amp * np.sin(wx * x[..., 0] + wy * x[..., 1] + wz * z + ph)
        tube = self.radius_at(z) + bump - rho
        wall = np.full_like(z, self.end_depth)
        for wx, wy, ph, amp in self._ew:
            wall += amp * np.sin(wx * x[..., 0] + wy * x[..., 1] + ph)
        end = wall - z
        h = np.maximum(self.blend - np.abs(tube - end), 0.0) / self.blend
        return np.minimum(tube, end) - h * h * self.blend / 4.0

    def gradient(self, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
        g = np.empty(x.shape)
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            g[..., i] = (self.field(x + e) - self.field(x - e)) / (2 * h)
        return g

    def contains_camera(self, origin) -> bool:
        return bool(self.field(np.asarray(origin, float)[None])[0] > 0)

    def intersect(self, origins: np.ndarray, dirs: np.ndarray, t_max: float | None = None):
        """First wall crossing along each ray: sphere tracing then bisection.

        Steps are ``field / lipschitz`` (never overshoot) with a floor of
        ``step_floor`` mm; the bracketed crossing is bisected to ``tolerance``.
        Returns distances (inf for misses) and unit normals facing the rays.
        """
        n = len(dirs)
        t_max = t_max if t_max is not None else 4.0 * (self.end_depth + 3 * self.radius)
        t = np.zeros(n)
        lo = np.zeros(n)
        hi = np.full(n, np.inf)
        active = np.arange(n)
        f = self.field(origins)
        if np.any(f <= 0):
            raise DomainError("ray origins must lie inside the lumen")
        for _ in range(100000):
            if active.size == 0:
                break
            step = np.maximum(f / self.lipschitz, self.step_floor)
            lo[active] = t[active]
            t[active] += step
            x = origins[active] + t[active, None] * dirs[active]
            f = self.field(x)
            crossed = f <= 0
            hi[active[crossed]] = t[active[crossed]]
            keep = ~crossed & (t[active] < t_max)
            active, f = active[keep], f[keep]
        hit = np.isfinite(hi)
        a, b = lo[hit], hi[hit]
        o, d = origins[hit], dirs[hit]
        while np.any(b - a > self.tolerance):
            m = 0.5 * (a + b)
            inside = self.field(o + m[:, None] * d) > 0
            a = np.where(inside, m, a)
            b = np.where(inside, b, m)
        t_hit = np.full(n, np.inf)
        t_hit[hit] = 0.5 * (a + b)
        normals = np.zeros((n, 3))
        if hit.any():
            g = self.gradient(o + t_hit[hit, None] * d)
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            flip = np.einsum("ij,ij->i", g, d) > 0
            g[flip] *= -1
            normals[hit] = g
        return t_hit, normals


@dataclass(frozen=True)
class Instrument:
    label: str
    capsules: CapsuleChain
    albedo: float = 1.0

    def __post_init__(self):
        if not 0 < self.albedo <= 1:
            raise DomainError("albedo must lie in (0, 1]")


def make_instrument(label: str, state: RobotState, lengths: SegmentLengths, mount: Mount,
                    samples_per_segment: int = 16, albedo: float = 1.0) -> Instrument:
    line = forward_shape(state, lengths, samples_per_segment, mount)
    return Instrument(label, capsule_chain(line, lengths.radius), albedo)


@dataclass(frozen=True)
class Scene:
    tissue: object
    instruments: tuple = ()
    light_pos: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sigma0: float = 1.0
    tissue_albedo: float = 1.0
    camera_response: float = 1.0
    auto_exposure: bool = False

    def __post_init__(self):
        if self.sigma0 <= 0:
            raise DomainError("sigma0 must be positive")
        if not 0 < self.tissue_albedo <= 1:
            raise DomainError("tissue albedo must lie in (0, 1]")
        if len(self.instruments) > 2:
            raise DomainError("at most two instruments")
        if isinstance(self.tissue, Lumen):
            for inst in self.instruments:
                if inst.capsules.radius >= self.tissue.radius * (1 - self.tissue.fold_amplitude):
                    raise DomainError("lumen radius must exceed the instrument radius")
