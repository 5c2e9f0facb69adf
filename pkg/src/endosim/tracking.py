"""Instrument mask utilities: box propagation, pixel sampling, segmentation NLL."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AmbiguityError, DomainError, TrackingLostError

DEFAULT_EPS = 20
DEFAULT_SAMPLES = 1024
PROB_FLOOR = 1e-12

BACKGROUND, LEFT, RIGHT = 0, 1, 2


@dataclass(frozen=True)
class BBox:
    left: int
    right: int
    top: int
    bottom: int

    def as_tuple(self):
        return (self.left, self.right, self.top, self.bottom)


def _binary(mask) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise DomainError("mask must be a 2D grid")
    if not np.isin(m, (0, 1)).all():
        raise DomainError("mask values must be 0 or 1")
    return m.astype(bool)


def bbox_update(prev_mask, eps: int = DEFAULT_EPS, W: int | None = None, H: int | None = None) -> BBox:
    """Box for the next frame: extremes of the previous mask padded by ``eps``, clamped to the image."""
    m = _binary(prev_mask)
    H = m.shape[0] if H is None else H
    W = m.shape[1] if W is None else W
    rows = np.flatnonzero(m.any(axis=1))
    cols = np.flatnonzero(m.any(axis=0))
    if rows.size == 0:
        raise TrackingLostError("previous mask is empty")
    lm, rm, tm, bm = cols[0], cols[-1], rows[0], rows[-1]
    return BBox(int(max(0, lm - eps)), int(min(W, rm + eps)), int(max(0, tm - eps)), int(min(H, bm + eps)))


def sample_mask_pixels(mask, count: int = DEFAULT_SAMPLES, seed: int = 0) -> np.ndarray:
    """``count`` (row, col) pixels drawn uniformly from the mask.

    Without replacement when the mask has at least ``count`` pixels, with
    replacement otherwise.
    """
    m = _binary(mask)
    idx = np.argwhere(m)
    if len(idx) == 0:
        raise DomainError("cannot sample from an empty mask")
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(idx), size=count, replace=len(idx) < count)
    return idx[pick]


def seg_nll(prob, target) -> float:
    """Mean negative log-probability of the target class; probabilities floored at 1e-12."""
    p = np.asarray(prob, float)
    t = np.asarray(target)
    if p.ndim != 3 or p.shape[:2] != t.shape:
        raise ValueError(f"shape mismatch: prob {p.shape}, target {t.shape}")
    if not np.allclose(p.sum(axis=-1), 1.0, atol=1e-6):
        raise DomainError("per-pixel probabilities must sum to 1")
    picked = np.take_along_axis(p, t[..., None].astype(int), axis=-1)[..., 0]
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))


def mask_to_class_map(mask_left, mask_right) -> np.ndarray:
    l, r = _binary(mask_left), _binary(mask_right)
    if l.shape != r.shape:
        raise ValueError("mask shapes differ")
    if np.any(l & r):
        raise AmbiguityError("left and right masks overlap")
    out = np.zeros(l.shape, dtype=np.uint8)
    out[l] = LEFT
    out[r] = RIGHT
    return out


def class_map_to_masks(class_map):
    c = np.asarray(class_map)
    return (c == LEFT).astype(np.uint8), (c == RIGHT).astype(np.uint8)


def decode_probabilities(prob) -> np.ndarray:
    """Per-pixel argmax class."""
    return np.asarray(prob).argmax(axis=-1).astype(np.uint8)
