"""Ray-cast renderer under a point light co-located with the camera.

Each pixel ray finds its nearest hit among the tissue surface and the
instrument capsules and is shaded Lambertian with inverse-square falloff:

    I = clip(f_c * sigma0 * rho * A * max(0, -L . N), 0, 1),
    A = 1 / |x - s|^2,  L = (x - s) / |x - s|

with N facing the camera.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import EmptyFrameError
from .geometry import CameraIntrinsics, pixel_rays
from .kinematics import CapsuleChain, Mount, RobotState, SegmentLengths
from .scene import Scene, default_mounts, make_instrument

SPECULAR_THRESHOLD = 0.98
EXPOSURE_PERCENTILE = 95.0
EXPOSURE_TARGET = 0.9


@dataclass
class FrameBundle:
    intensity: np.ndarray
    depth: np.ndarray
    normal: np.ndarray
    mask_left: np.ndarray
    mask_right: np.ndarray
    specular_mask: np.ndarray
    sigma0: float = 1.0

    def __post_init__(self):
        shape = self.intensity.shape
        for name in ("depth", "mask_left", "mask_right", "specular_mask"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} shape {getattr(self, name).shape} != {shape}")
        if self.normal.shape != shape + (3,):
            raise ValueError("normal grid must be H x W x 3")

    @property
    def shape(self):
        return self.intensity.shape


def intensity_map(frame) -> np.ndarray:
    """Grayscale intensity in [0, 1]: identity for 2D input, channel mean otherwise."""
    a = np.asarray(frame)
    if a.size == 0:
        raise ValueError("empty frame")
    if np.issubdtype(a.dtype, np.integer):
        a = a / float(np.iinfo(a.dtype).max)
    a = a.astype(float)
    if a.ndim == 2:
        return a
    return a.mean(axis=-1)


def specular_mask(intensity) -> np.ndarray:
    """1 where the pixel is usable for photometric losses (strictly below 0.98)."""
    return (np.asarray(intensity) < SPECULAR_THRESHOLD).astype(np.uint8)


def ray_capsules(origins: np.ndarray, dirs: np.ndarray, caps: CapsuleChain, K: CameraIntrinsics | None = None,
                 pixel_uv: np.ndarray | None = None):
    """Nearest positive hit of each ray with a capsule chain; returns (t, normals).

    When ``K`` and ``pixel_uv`` are supplied, each capsule is only tested against
    rays whose pixel falls in the screen-space box of its bounding sphere.
    """
    n = len(dirs)
    best = np.full(n, np.inf)
    r = caps.radius
    for a, b in zip(caps.a, caps.b):
        idx = slice(None)
        if K is not None:
            idx = _screen_cull(a, b, r, K, pixel_uv)
            if idx is not None and idx.size == 0:
                continue
            if idx is None:
                idx = slice(None)
        ro, rd = origins[idx], dirs[idx]
        t = _capsule_t(ro, rd, a, b, r)
        cur = best[idx]
        best[idx] = np.minimum(cur, t)
    normals = np.zeros((n, 3))
    hit = np.isfinite(best)
    if hit.any():
        p = origins[hit] + best[hit, None] * dirs[hit]
        x = p[:, None, :]
        ab = caps.b - caps.a
        denom = np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300)
        s = np.clip(np.einsum("kij,ij->ki", x - caps.a, ab) / denom, 0.0, 1.0)
        closest = caps.a + s[..., None] * ab
        dist = np.linalg.norm(x - closest, axis=-1)
        j = dist.argmin(axis=1)
        c = closest[np.arange(len(p)), j]
        nn = p - c
        nn /= np.linalg.norm(nn, axis=1, keepdims=True)
        normals[hit] = nn
    return best, normals


def _screen_cull(a, b, r, K: CameraIntrinsics, uv):
    center = 0.5 * (a + b)
    rad = 0.5 * np.linalg.norm(b - a) + r
    if center[2] + rad <= 0:
        return np.empty(0, dtype=int)
    if center[2] - rad <= 1e-3:
        return None  # sphere straddles the image plane; test every ray
    z = center[2] - rad
    cu = K.fx * center[0] / center[2] + K.cx
    cv = K.fy * center[1] / center[2] + K.cy
    # conservative half-extent of the projected sphere
    ext_u = K.fx * (rad / z + abs(center[0]) * (1 / z - 1 / center[2]))
    ext_v = K.fy * (rad / z + abs(center[1]) * (1 / z - 1 / center[2]))
    sel = ((uv[:, 0] >= cu - ext_u - 1) & (uv[:, 0] <= cu + ext_u + 1)
           & (uv[:, 1] >= cv - ext_v - 1) & (uv[:, 1] <= cv + ext_v + 1))
    return np.flatnonzero(sel)


def _capsule_t(ro, rd, a, b, r):
    """Closed-form ray/capsule intersection (cylinder body plus spherical caps)."""
    ba = b - a
    oa = ro - a
    baba = ba @ ba
    bard = rd @ ba
    baoa = oa @ ba
    rdoa = np.einsum("ij,ij->i", rd, oa)
    oaoa = np.einsum("ij,ij->i", oa, oa)
    t = np.full(len(rd), np.inf)
    if baba > 1e-300:
        A = baba - bard * bard
        B = baba * rdoa - baoa * bard
        C = baba * oaoa - baoa * baoa - r * r * baba
        h = B * B - A * C
        ok = (h >= 0) & (A > 1e-300)
        with np.errstate(invalid="ignore", divide="ignore"):
            tc = (-B - np.sqrt(np.where(ok, h, 0.0))) / A
        y = baoa + tc * bard
        body = ok & (y > 0) & (y < baba) & (tc > 0)
        t = np.where(body, tc, t)
    for c in (a, b):
        oc = ro - c
        B = np.einsum("ij,ij->i", rd, oc)
        C = np.einsum("ij,ij->i", oc, oc) - r * r
        h = B * B - C
        ok = h >= 0
        ts = -B - np.sqrt(np.where(ok, h, 0.0))
        t = np.where(ok & (ts > 0) & (ts < t), ts, t)
    return t


def _render_rows(scene: Scene, K: CameraIntrinsics, dirs: np.ndarray, rows: range):
    W = K.width
    d = dirs[rows.start:rows.stop].reshape(-1, 3)
    n = len(d)
    origins = np.zeros((n, 3))
    vv, uu = np.mgrid[rows.start:rows.stop, 0:W]
    uv = np.stack([uu.ravel(), vv.ravel()], axis=1).astype(float)
    t, normals = scene.tissue.intersect(origins, d)
    label = np.zeros(n, dtype=np.int8)  # 0 tissue, 1.. instrument index + 1
    albedo = np.full(n, scene.tissue_albedo)
    for k, inst in enumerate(scene.instruments):
        ti, ni = ray_capsules(origins, d, inst.capsules, K, uv)
        closer = ti < t
        t = np.where(closer, ti, t)
        normals[closer] = ni[closer]
        label[closer] = k + 1
        albedo[closer] = inst.albedo
    return t, normals, label, albedo


def render(scene: Scene, state_left: RobotState | None, state_right: RobotState | None,
           K: CameraIntrinsics, lengths: SegmentLengths | None = None,
           mounts: dict[str, Mount] | None = None, workers: int = 1, chunk_rows: int = 32) -> FrameBundle:
    """Render intensity, z-depth, normals and per-instrument masks.

    Instruments given by state are added to ``scene.instruments``; a ``None``
    state omits that instrument. Rows are rendered in independent chunks, so
    the result does not depend on ``workers``.
    """
    lengths = lengths or SegmentLengths()
    mounts = mounts or default_mounts()
    insts = list(scene.instruments)
    labels = [i.label for i in insts]
    for label, state in (("left", state_left), ("right", state_right)):
        if state is not None:
            insts.append(make_instrument(label, state, lengths, mounts[label]))
            labels.append(label)
    full = Scene(scene.tissue, tuple(insts), scene.light_pos, scene.sigma0, scene.tissue_albedo,
                 scene.camera_response, scene.auto_exposure)
    if not full.tissue.contains_camera(np.zeros(3)):
        raise EmptyFrameError("camera lies outside the tissue geometry")

    H, W = K.height, K.width
    dirs = pixel_rays(K)
    chunks = [range(r, min(H, r + chunk_rows)) for r in range(0, H, chunk_rows)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda rows: _render_rows(full, K, dirs, rows), chunks))
    else:
        parts = [_render_rows(full, K, dirs, rows) for rows in chunks]
    t = np.concatenate([p[0] for p in parts]).reshape(H, W)
    normal = np.concatenate([p[1] for p in parts]).reshape(H, W, 3)
    label = np.concatenate([p[2] for p in parts]).reshape(H, W)
    albedo = np.concatenate([p[3] for p in parts]).reshape(H, W)

    hit = np.isfinite(t)
    if not hit.any():
        raise EmptyFrameError("no geometry in view")
    x = np.where(hit[..., None], t[..., None] * dirs, 0.0)
    depth = np.where(hit, x[..., 2], 0.0)
    to_x = x - np.asarray(full.light_pos, float)
    dist2 = np.einsum("...i,...i->...", to_x, to_x)
    with np.errstate(divide="ignore", invalid="ignore"):
        L = to_x / np.sqrt(dist2)[..., None]
        shade = np.maximum(0.0, -np.einsum("...i,...i->...", L, normal)) / dist2
    shade = np.where(hit, shade, 0.0)
    radiance = full.camera_response * albedo * shade
    sigma0 = full.sigma0
    if full.auto_exposure:
        ref = hit & (label == 0) if (hit & (label == 0)).any() else hit
        p = np.percentile(radiance[ref], EXPOSURE_PERCENTILE)
        sigma0 = EXPOSURE_TARGET / p if p > 0 else full.sigma0
    intensity = np.clip(sigma0 * radiance, 0.0, 1.0)
    normal[~hit] = 0.0
    masks = {}
    for side in ("left", "right"):
        m = np.zeros((H, W), dtype=np.uint8)
        for k, lab in enumerate(labels):
            if lab == side:
                m |= (label == k + 1).astype(np.uint8)
        masks[side] = m
    return FrameBundle(intensity, depth, normal, masks["left"], masks["right"],
                       specular_mask(intensity), float(sigma0))
