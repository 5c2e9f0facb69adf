"""Instrument state from a binary mask by skeleton-to-model Chamfer fitting.

The mask is thinned to a one-pixel skeleton; the forward model's centerline
is projected into the image and compared with the skeleton by the symmetric
mean nearest-neighbour distance. Nelder-Mead runs from several seeded starts
spread over the roll angle. The best candidates are then polished against the
mask itself through an anti-aliased silhouette of the capsule model.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt, label as cc_label
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.interpolate import splev, splprep
from scipy.optimize import minimize
from scipy.spatial import cKDTree
from skimage.morphology import thin

from ..errors import DomainError
from ..geometry import CameraIntrinsics, pixel_rays
from ..kinematics import Mount, RobotState, SegmentLengths, forward_shape, wrap_angle
from ..render import ray_capsules
from ..scene import make_instrument

MIN_AREA = 100
LOW_CONFIDENCE_PX = 20.0
_NEAR_PLANE = 0.5   # mm; centerline samples closer than this are not projected
_MISS_PENALTY = 1e3
_MIN_ROLL_GAP = np.radians(30.0)


@dataclass(frozen=True)
class StateFitConfig:
    restarts: int = 8
    max_evals: int = 600
    tol: float = 1e-4
    skeleton_samples: int = 400
    seed: int = 0
    probes_per_restart: int = 40
    model_samples: int = 24
    identifiability_px: float = 1.0
    max_halfwidth: float = 25.0
    width_weight: float = 3.0
    synthesis_rounds: int = 0
    refine_candidates: int = 2
    capsules_per_segment: int = 16
    silhouette_factor: int = 4      # silhouette stage runs at 1/factor resolution
    silhouette_evals: int = 200
    silhouette_step: float = 0.03   # rad, initial simplex edge

    def __post_init__(self):
        if self.restarts < 1:
            raise DomainError("restarts must be >= 1")
        if self.silhouette_factor < 1:
            raise DomainError("silhouette_factor must be >= 1")


@dataclass(frozen=True)
class StateFit:
    state: RobotState
    residual: float
    synthesis_residual: float
    silhouette_mismatch: float
    low_confidence: bool
    delta_identifiable: bool
    delta_sensitivity: float
    evaluations: int

    def to_dict(self) -> dict:
        return {"state": self.state.to_dict(), "residual_px": self.residual,
                "synthesis_residual_px": self.synthesis_residual,
                "silhouette_mismatch": self.silhouette_mismatch,
                "low_confidence": self.low_confidence,
                "delta_identifiable": self.delta_identifiable,
                "delta_sensitivity_px": self.delta_sensitivity}


def _longest_path(skel: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ordered (rows, cols) of the longest geodesic path through an 8-connected skeleton."""
    rows, cols = np.nonzero(skel)
    index = -np.ones(skel.shape, dtype=int)
    index[rows, cols] = np.arange(len(rows))
    H, W = skel.shape
    src, dst, w = [], [], []
    for dr, dc in ((0, 1), (1, -1), (1, 0), (1, 1)):
        r2, c2 = rows + dr, cols + dc
        ok = (r2 >= 0) & (r2 < H) & (c2 >= 0) & (c2 < W)
        j = np.full(len(rows), -1)
        j[ok] = index[r2[ok], c2[ok]]
        hit = j >= 0
        src.append(np.nonzero(hit)[0])
        dst.append(j[hit])
        w.append(np.full(hit.sum(), np.hypot(dr, dc)))
    n = len(rows)
    g = csr_matrix((np.concatenate(w), (np.concatenate(src), np.concatenate(dst))), shape=(n, n))
    # two sweeps find the diameter of a tree; good enough for thinned masks
    d0 = dijkstra(g, directed=False, indices=0)
    a = int(np.argmax(np.where(np.isfinite(d0), d0, -1)))
    da, pred = dijkstra(g, directed=False, indices=a, return_predecessors=True)
    b = int(np.argmax(np.where(np.isfinite(da), da, -1)))
    path = [b]
    while path[-1] != a:
        path.append(pred[path[-1]])
    path = np.array(path)
    return rows[path], cols[path]


def mask_skeleton(mask, max_halfwidth: float = np.inf, pad: int = 48, smoothing: float = 0.25) -> np.ndarray:
    """(u, v, half-width) of skeleton pixels of the largest mask component.

    The mask is edge-padded before thinning so tubes cut by the image border
    keep running straight out instead of forking into the corners. Only the
    longest skeleton path is kept and smoothed, and points where the local half-width
    exceeds ``max_halfwidth`` are dropped (close to the camera the tube is a
    wide blob whose medial axis says little about the centerline).
    """
    m = np.asarray(mask).astype(bool)
    lab, n = cc_label(m, structure=np.ones((3, 3)))
    if n == 0:
        raise DomainError("mask is empty")
    sizes = np.bincount(lab.ravel())[1:]
    if sizes.max() < MIN_AREA:
        raise DomainError(f"largest mask component has {sizes.max()} px (< {MIN_AREA})")
    comp = np.pad(lab == (np.argmax(sizes) + 1), pad, mode="edge")
    dt = distance_transform_edt(comp)
    sk = thin(comp)
    if sk.sum() < 4:
        rows, cols = np.nonzero(sk)
        pts = np.stack([cols, rows, dt[rows, cols]], axis=1).astype(float)
    else:
        rows, cols = _longest_path(sk)
        pts = _smooth_path(np.stack([cols, rows, dt[rows, cols]], axis=1).astype(float), smoothing)
    pts[:, :2] -= pad
    keep = ((pts[:, 2] <= max_halfwidth) & (pts[:, 0] >= -0.5) & (pts[:, 0] <= m.shape[1] - 0.5)
            & (pts[:, 1] >= -0.5) & (pts[:, 1] <= m.shape[0] - 0.5))
    return pts[keep]


def _smooth_path(pts: np.ndarray, smoothing: float) -> np.ndarray:
    """Smoothing-spline fit through an ordered pixel path, resampled at unit arc length.

    Removes the staircase of the pixel grid so the fit sees a sub-pixel curve.
    """
    step = np.hypot(*np.diff(pts[:, :2], axis=0).T)
    t = np.concatenate([[0.0], np.cumsum(step)])
    n = len(t)
    k = min(3, n - 1)
    tck, _ = splprep(pts.T, u=t, k=k, s=smoothing * n)
    return np.stack(splev(np.arange(0.0, t[-1] + 1e-9, 1.0), tck), axis=1)


def _model_curve(state: RobotState, lengths: SegmentLengths, K: CameraIntrinsics, mount: Mount,
                 samples: int) -> np.ndarray:
    """Dense image curve of the centerline as rows (u, v, half-width, arc length)."""
    line = forward_shape(state, lengths, samples, mount)
    front = line.points[:, 2] > _NEAR_PLANE
    pts, tan = line.points[front], line.tangents[front]
    f = np.array([K.fx, K.fy])
    c = np.array([K.cx, K.cy])
    uv = f * pts[:, :2] / pts[:, 2:] + c
    # silhouette generator: the surface line offset from the axis along t x c
    n = np.cross(tan, pts)
    n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)
    edge = pts + lengths.radius * n
    w = np.linalg.norm(f * edge[:, :2] / edge[:, 2:] + c - uv, axis=1)
    return _densify(np.column_stack([uv, w, line.arc[front]]))


def _in_view(pts: np.ndarray, K: CameraIntrinsics, max_halfwidth: float) -> np.ndarray:
    return ((pts[:, 2] <= max_halfwidth) & (pts[:, 0] >= -0.5) & (pts[:, 0] <= K.width - 0.5)
            & (pts[:, 1] >= -0.5) & (pts[:, 1] <= K.height - 0.5))


def project_centerline(state: RobotState, lengths: SegmentLengths, K: CameraIntrinsics, mount: Mount,
                       samples: int = 24, max_halfwidth: float = np.inf) -> np.ndarray:
    """(u, v, half-width) of projected centerline samples inside the image.

    Samples whose projected tube radius exceeds ``max_halfwidth`` px are left out.
    """
    curve = _model_curve(state, lengths, K, mount, samples)
    return curve[_in_view(curve, K, max_halfwidth), :3]


def instrument_mask(state: RobotState, lengths: SegmentLengths, K: CameraIntrinsics, mount: Mount,
                    capsules_per_segment: int = 16) -> np.ndarray:
    """Silhouette of the instrument alone, rasterized like the renderer does."""
    dirs = pixel_rays(K).reshape(-1, 3)
    v, u = np.mgrid[0:K.height, 0:K.width]
    uv = np.stack([u.ravel(), v.ravel()], axis=1).astype(float)
    inst = make_instrument("fit", state, lengths, mount, capsules_per_segment)
    t, _ = ray_capsules(np.zeros_like(dirs), dirs, inst.capsules, K, uv)
    return np.isfinite(t).reshape(K.shape)


def soft_silhouette(state: RobotState, lengths: SegmentLengths, mount: Mount, dirs: np.ndarray,
                    focal: float, capsules_per_segment: int = 16) -> np.ndarray:
    """Anti-aliased instrument coverage in [0, 1] for unit pixel rays ``dirs`` (N, 3).

    The exact ray-to-capsule clearance is converted to pixels at the depth of
    the closest approach, and coverage ramps linearly over one pixel around the
    silhouette, so it varies continuously with the state.
    """
    line = forward_shape(state, lengths, capsules_per_segment, mount)
    a = line.points[:-1]
    e = np.diff(line.points, axis=0)
    ee = np.einsum("ij,ij->i", e, e)
    ae = np.einsum("ij,ij->i", a, e)
    aa = np.einsum("ij,ij->i", a, a)
    ed = dirs @ e.T
    ad = dirs @ a.T
    # squared distance from a + s e to the ray line is quadratic in s
    s = np.clip(-(ae - ad * ed) / np.maximum(ee - ed * ed, 1e-12), 0.0, 1.0)
    along = ad + s * ed
    d2 = aa + 2 * s * ae + s * s * ee - along ** 2
    clearance = np.sqrt(np.maximum(d2, 0.0)) - lengths.radius
    z = np.maximum(along, 1e-3) * dirs[:, 2:3]
    return np.clip(0.5 - (clearance * focal / z).min(axis=1), 0.0, 1.0)


def _densify(poly: np.ndarray, spacing: float = 1.0) -> np.ndarray:
    """Linear resampling of a polyline so image-plane gaps stay below ``spacing`` px."""
    if len(poly) < 2:
        return poly
    seg = np.hypot(*np.diff(poly[:, :2], axis=0).T)
    n = np.maximum(1, np.ceil(np.minimum(seg, 1e4) / spacing).astype(int))
    idx = np.repeat(np.arange(len(seg)), n)
    frac = np.concatenate([np.arange(k) / k for k in n])
    out = poly[idx] + frac[:, None] * (poly[idx + 1] - poly[idx])
    return np.vstack([out, poly[-1:]])


def chamfer(a: np.ndarray, b_tree: cKDTree, b: np.ndarray) -> float:
    """Symmetric mean nearest-neighbour distance between point sets ``a`` and ``b``."""
    if len(a) == 0:
        return _MISS_PENALTY
    d_ab, _ = b_tree.query(a)
    d_ba, _ = cKDTree(a).query(b)
    return 0.5 * (float(d_ab.mean()) + float(d_ba.mean()))


def _clip_state(x, insertion):
    a = float(np.clip(x[0], 0.0, np.pi))
    b = float(np.clip(x[1], 0.0, np.pi))
    g = float(np.clip(x[2], -np.pi / 2, np.pi / 2))
    return RobotState(a, b, g, wrap_angle(x[3]), insertion)


def _overshoot(x) -> float:
    # out-of-range coordinates cost their distance to the box so the simplex is pulled back
    return (max(0.0, x[0] - np.pi) + max(0.0, -x[0]) + max(0.0, x[1] - np.pi) + max(0.0, -x[1])
            + max(0.0, abs(x[2]) - np.pi / 2))


def _state_gap(a: RobotState, b: RobotState) -> float:
    d = np.abs(a.angles - b.angles)
    d[3] = abs(wrap_angle(a.delta - b.delta))
    return float(d.max())


def fit_state(mask, lengths: SegmentLengths, K: CameraIntrinsics, mount: Mount, insertion: float,
              config: StateFitConfig | None = None) -> StateFit:
    """Fit (alpha, beta, gamma, delta) to an instrument mask; insertion is known."""
    cfg = config or StateFitConfig()
    skel = mask_skeleton(mask, cfg.max_halfwidth)
    rng = np.random.default_rng(cfg.seed)
    if len(skel) > cfg.skeleton_samples:
        skel = skel[np.sort(rng.choice(len(skel), cfg.skeleton_samples, replace=False))]
    scale = np.array([1.0, 1.0, cfg.width_weight])
    skel = skel * scale
    tree = cKDTree(skel)
    evals = 0

    def residual(state: RobotState) -> float:
        uv = project_centerline(state, lengths, K, mount, cfg.model_samples, cfg.max_halfwidth)
        return chamfer(uv * scale, tree, skel)

    def objective(x):
        nonlocal evals
        evals += 1
        return residual(_clip_state(x, insertion)) + 10.0 * _overshoot(x)

    edges = np.linspace(-np.pi, np.pi, cfg.restarts + 1)
    found = []
    for k in range(cfg.restarts):
        probes = np.column_stack([
            rng.uniform(0.0, 2.0, cfg.probes_per_restart),
            rng.uniform(0.0, 2.0, cfg.probes_per_restart),
            rng.uniform(-0.6, 0.6, cfg.probes_per_restart),
            rng.uniform(edges[k], edges[k + 1], cfg.probes_per_restart),
        ])
        vals = [objective(p) for p in probes]
        x0 = probes[int(np.argmin(vals))]
        simplex = x0 + np.vstack([np.zeros(4), 0.25 * np.eye(4)])
        res = minimize(objective, x0, method="Nelder-Mead",
                       options={"maxfev": cfg.max_evals, "xatol": cfg.tol, "fatol": 1e-6,
                                "initial_simplex": simplex})
        found.append((float(res.fun), k, res.x))
    found.sort(key=lambda item: (item[0], item[1]))
    candidates = []
    for _, _, xk in found:
        sk_ = _clip_state(xk, insertion)
        if all(_state_gap(sk_, _clip_state(c, insertion)) > np.radians(5) for c in candidates):
            candidates.append(xk)
        if len(candidates) == cfg.refine_candidates:
            break

    def synthesize(state: RobotState):
        try:
            return mask_skeleton(instrument_mask(state, lengths, K, mount, cfg.capsules_per_segment),
                                 cfg.max_halfwidth)
        except DomainError:
            return None

    def refine(x):
        # Linearized analysis by synthesis. Thinning and pixel sampling pull the
        # skeleton off the projected centerline by up to a pixel or so. Rendering
        # the current estimate measures that offset per arc length, and the refit
        # compares the offset-corrected model with the observed skeleton, which
        # is exact at the true state. Off by default: the silhouette stage that
        # follows removes the same bias more cheaply.
        for _ in range(cfg.synthesis_rounds):
            cur = _clip_state(x, insertion)
            synth = synthesize(cur)
            curve = _model_curve(cur, lengths, K, mount, cfg.model_samples)
            if synth is None or len(synth) == 0 or len(curve) < 2:
                break
            _, nn = cKDTree(curve[:, :2]).query(synth[:, :2])
            s_j = curve[nn, 3]
            offset = synth - curve[nn, :3]

            def objective2(y):
                nonlocal evals
                evals += 1
                c = _model_curve(_clip_state(y, insertion), lengths, K, mount, cfg.model_samples)
                if len(c) < 2:
                    return _MISS_PENALTY
                arc = c[:, 3]
                ok = (s_j >= arc[0]) & (s_j <= arc[-1])
                pred = np.column_stack([np.interp(s_j[ok], arc, c[:, i]) for i in range(3)]) + offset[ok]
                return chamfer(pred * scale, tree, skel) + 10.0 * _overshoot(y)

            simplex = x + np.vstack([np.zeros(4), 0.05 * np.eye(4)])
            x = minimize(objective2, x, method="Nelder-Mead",
                         options={"maxfev": cfg.max_evals, "xatol": cfg.tol, "fatol": 1e-6,
                                  "initial_simplex": simplex}).x
        return x

    # silhouette stage on a block-averaged copy of the mask
    f = cfg.silhouette_factor
    H, W = K.shape
    h, w = H // f, W // f
    obs = np.asarray(mask, float)[:h * f, :w * f].reshape(h, f, w, f).mean(axis=(1, 3)).ravel()
    Kw = K.scaled(1.0 / f) if f > 1 else K
    dirs = pixel_rays(Kw).reshape(-1, 3)

    def silhouette_loss(y):
        nonlocal evals
        evals += 1
        cov = soft_silhouette(_clip_state(y, insertion), lengths, mount, dirs, Kw.fx,
                              cfg.capsules_per_segment)
        return float(np.sum((cov - obs) ** 2)) + 100.0 * _overshoot(y)

    def polish(x):
        simplex = x + np.vstack([np.zeros(4), cfg.silhouette_step * np.eye(4)])
        res = minimize(silhouette_loss, x, method="Nelder-Mead",
                       options={"maxfev": cfg.silhouette_evals, "xatol": cfg.tol, "fatol": 1e-6,
                                "initial_simplex": simplex})
        return float(res.fun), _clip_state(res.x, insertion)

    refined = [polish(refine(np.asarray(c, dtype=float))) for c in candidates]
    sil_loss, state = min(refined, key=lambda item: item[0])
    synth = synthesize(state)
    synth_res = _MISS_PENALTY if synth is None or len(synth) == 0 else chamfer(synth * scale, tree, skel)
    uv = project_centerline(state, lengths, K, mount, cfg.model_samples, cfg.max_halfwidth)
    res_px = chamfer(uv[:, :2], cKDTree(skel[:, :2]), skel[:, :2])

    # Roll is ambiguous when a clearly different roll reproduces the fit. A straight
    # tool maps (gamma, delta) to (-gamma, delta + pi) without changing the image.
    base = residual(state)
    alt = [residual(RobotState(state.alpha, state.beta, g, wrap_angle(d), insertion))
           for d in state.delta + np.linspace(_MIN_ROLL_GAP, 2 * np.pi - _MIN_ROLL_GAP, 21)
           for g in (state.gamma, -state.gamma)]
    sensitivity = float(min(alt) - base)
    mismatch = sil_loss / max(float(obs.sum()), 1.0)
    return StateFit(state, res_px, synth_res, mismatch, res_px > LOW_CONFIDENCE_PX,
                    sensitivity > cfg.identifiability_px, sensitivity, evals)
