"""Per-pixel rendering (PPR) field and the photometric losses built on it.

PPR = A * max(0, -L . N): inverse-square attenuation times Lambertian shading
of a surface lit by a point source ``s``. It is computed from a depth map
alone, so it can be compared with image intensity to supervise depth.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFieldError, DomainError, SingularityError
from .geometry import CameraIntrinsics

# |forward - backward| depth step above this fraction of z marks a depth edge
EDGE_RELATIVE_JUMP = 0.05


@dataclass
class PPRField:
    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.valid.shape:
            raise ValueError("values and validity grids differ in shape")


def depth_to_points(depth, K: CameraIntrinsics) -> np.ndarray:
    """Back-project z-depth grid(s) (..., H, W) to camera-frame points (..., H, W, 3).

    Points are zero where depth <= 0.
    """
    depth = np.asarray(depth, float)
    H, W = depth.shape[-2:]
    v, u = np.mgrid[0:H, 0:W].astype(float)
    d = np.where(depth > 0, depth, 0.0)
    return np.stack([d * (u - K.cx) / K.fx, d * (v - K.cy) / K.fy, d], axis=-1)


def _axis_tangent(P, z, valid, axis, edge_aware=True):
    """Difference of back-projected points along one image axis.

    Central where both neighbours are valid and on the same surface, else the
    one-sided difference toward the neighbour with the smaller depth step.
    """
    fwd = np.zeros_like(P)
    bwd = np.zeros_like(P)
    fv = np.zeros(valid.shape, bool)
    bv = np.zeros(valid.shape, bool)
    sl_a = [Ellipsis, slice(None), slice(None)]
    sl_b = [Ellipsis, slice(None), slice(None)]
    sl_a[axis] = slice(0, -1)
    sl_b[axis] = slice(1, None)
    sl_a, sl_b = tuple(sl_a), tuple(sl_b)
    ok = valid[sl_b] & valid[sl_a]
    sl_a3, sl_b3 = sl_a + (slice(None),), sl_b + (slice(None),)
    diff = P[sl_b3] - P[sl_a3]
    fwd[sl_a3] = diff
    fv[sl_a] = ok
    bwd[sl_b3] = diff
    bv[sl_b] = ok
    dzf = np.abs(fwd[..., 2])
    dzb = np.abs(bwd[..., 2])
    if edge_aware:
        edge = np.abs(dzf - dzb) > EDGE_RELATIVE_JUMP * np.maximum(z, 1e-12)
    else:
        edge = np.zeros(valid.shape, bool)
    both = fv & bv
    central = both & ~edge
    use_f = (fv & ~bv) | (both & edge & (dzf <= dzb))
    use_b = (bv & ~fv) | (both & edge & (dzb < dzf))
    t = np.zeros_like(P)
    t[central] = 0.5 * (fwd[central] + bwd[central])
    t[use_f] = fwd[use_f]
    t[use_b] = bwd[use_b]
    return t, central | use_f | use_b


def normals_from_depth(depth, K: CameraIntrinsics, edge_aware: bool = True):
    """Unit normals (H, W, 3) facing the camera, and their validity grid.

    Pixels with no valid neighbour along either image axis are invalid (zero
    normal). With ``edge_aware`` a central difference straddling a depth jump is
    replaced by the one-sided difference on the near-continuous side; turning it
    off keeps the normals a smooth function of depth.
    """
    depth = np.asarray(depth, float)
    valid = depth > 0
    P = depth_to_points(depth, K)
    z = np.where(valid, depth, 0.0)
    tu, okx = _axis_tangent(P, z, valid, axis=-1, edge_aware=edge_aware)
    tv, oky = _axis_tangent(P, z, valid, axis=-2, edge_aware=edge_aware)
    n = np.cross(tu, tv)
    norm = np.linalg.norm(n, axis=-1)
    ok = valid & okx & oky & (norm > 0)
    n = np.where(ok[..., None], n / np.where(norm > 0, norm, 1.0)[..., None], 0.0)
    flip = np.einsum("...i,...i->...", n, P) > 0
    n[flip] *= -1
    return n, ok


def attenuation_and_light(depth, K: CameraIntrinsics, s=(0.0, 0.0, 0.0)):
    """Attenuation A = 1/|x - s|^2 and light direction L = (x - s)/|x - s| per pixel."""
    depth = np.asarray(depth, float)
    valid = depth > 0
    if not valid.any():
        raise DomainError("depth has no valid pixels")
    s = np.asarray(s, float)
    if not np.all(np.isfinite(s)):
        raise DomainError("light position must be finite")
    x = depth_to_points(depth, K) - s
    dist2 = np.einsum("...i,...i->...", x, x)
    if np.any(valid & (dist2 == 0)):
        raise SingularityError("a surface point coincides with the light")
    safe = np.where(valid, dist2, 1.0)
    A = np.where(valid, 1.0 / safe, 0.0)
    L = np.where(valid[..., None], x / np.sqrt(safe)[..., None], 0.0)
    return A, L


def ppr(depth, K: CameraIntrinsics, s=(0.0, 0.0, 0.0)) -> PPRField:
    A, L = attenuation_and_light(depth, K, s)
    N, ok = normals_from_depth(depth, K)
    shade = np.maximum(0.0, -np.einsum("...i,...i->...", L, N))
    return PPRField(np.where(ok, A * shade, 0.0), ok)


def pseudo_intensity(depth, K: CameraIntrinsics, s=(0.0, 0.0, 0.0), albedo=None) -> np.ndarray:
    """Albedo-weighted PPR normalised by its maximum over valid pixels."""
    field = ppr(depth, K, s)
    if not field.valid.any():
        raise DomainError("no valid pixels to normalise")
    albedo = 1.0 if albedo is None else np.asarray(albedo, float)
    if np.any((albedo <= 0) | (albedo > 1)):
        raise DomainError("albedo proxy must lie in (0, 1]")
    p = np.where(field.valid, albedo * field.values, 0.0)
    peak = p[field.valid].max()
    return p / peak if peak > 0 else p


def albedo_proxy(rgb) -> np.ndarray:
    """Constant-brightness albedo proxy: the image with HSV value forced to 1, as gray."""
    from skimage.color import hsv2rgb, rgb2hsv

    a = np.asarray(rgb, float)
    if a.ndim == 2:
        return np.ones_like(a)
    hsv = rgb2hsv(a[..., :3])
    hsv[..., 2] = 1.0
    return np.clip(hsv2rgb(hsv).mean(axis=-1), 1e-6, 1.0)


def supervised_ppr_loss(ppr_est, ppr_gt, E) -> float:
    """Mean over all H*W pixels of E * (est - gt)^2."""
    est, gt, E = (np.asarray(a, float) for a in (ppr_est, ppr_gt, E))
    if not (est.shape == gt.shape == E.shape):
        raise ValueError(f"shape mismatch: {est.shape}, {gt.shape}, {E.shape}")
    return float(np.mean(E * (est - gt) ** 2))


def masked_correlation(a, b, E) -> float:
    """Pearson correlation of ``a`` and ``b`` over pixels where E is set."""
    a, b, E = (np.asarray(x, float) for x in (a, b, E))
    if not (a.shape == b.shape == E.shape):
        raise ValueError(f"shape mismatch: {a.shape}, {b.shape}, {E.shape}")
    m = E > 0
    if not m.any():
        raise DegenerateFieldError("mask selects no pixels")
    x = a[m]
    y = b[m]
    x = x - x.mean()
    y = y - y.mean()
    sxx = np.sum(x * x)
    syy = np.sum(y * y)
    n = x.size
    if sxx / n <= 1e-12 or syy / n <= 1e-12:
        raise DegenerateFieldError("masked field has (near) zero variance")
    return float(np.sum(x * y) / np.sqrt(sxx * syy))


def selfsup_ppr_loss(ppr_est, intensity, E) -> float:
    """1 - Pearson correlation of the PPR estimate and image intensity over E = 1."""
    return 1.0 - masked_correlation(ppr_est, intensity, E)
