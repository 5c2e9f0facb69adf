"""Depth, angular-state and segmentation metrics."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError
from .geometry import CameraIntrinsics, backproject

THRESHOLDS = (1.25, 1.25 ** 2, 1.25 ** 3)
STATE_PARAMETERS = ("alpha", "beta", "gamma", "delta")


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    eta1: float
    eta2: float
    eta3: float

    def rows(self):
        units = {"rmse": "mm", "sq_rel": "mm"}
        return [(k, v, units.get(k, "1")) for k, v in asdict(self).items()]


def depth_metrics(pred, gt, valid=None) -> DepthMetrics:
    """Standard monocular depth errors; eta uses max(d*/d, d/d*) < threshold (strict)."""
    pred = np.asarray(pred, float)
    gt = np.asarray(gt, float)
    if pred.shape != gt.shape:
        raise ValueError("pred and gt shapes differ")
    valid = gt > 0 if valid is None else np.asarray(valid, bool)
    if not valid.any():
        raise DomainError("empty valid mask")
    d, ds = pred[valid], gt[valid]
    if np.any(ds <= 0) or np.any(d <= 0):
        raise DomainError("depths must be positive on the valid mask")
    err = ds - d
    ratio = np.maximum(ds / d, d / ds)
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(err) / ds)),
        sq_rel=float(np.mean(err ** 2 / ds)),
        rmse=float(np.sqrt(np.mean(err ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(ds) - np.log(d)) ** 2))),
        eta1=float(np.mean(ratio < THRESHOLDS[0])),
        eta2=float(np.mean(ratio < THRESHOLDS[1])),
        eta3=float(np.mean(ratio < THRESHOLDS[2])),
    )


@dataclass(frozen=True)
class ParameterErrors:
    mean: float
    median: float
    acc_lo: float
    acc_hi: float
    skew_flag: bool


@dataclass(frozen=True)
class AngularMetrics:
    per_parameter: dict
    thresholds: tuple

    def rows(self):
        lo, hi = (f"{t:g}" for t in self.thresholds)
        out = []
        for name, e in self.per_parameter.items():
            out += [(f"{name}_mean", e.mean, "deg"), (f"{name}_median", e.median, "deg"),
                    (f"{name}_acc{lo}", e.acc_lo, "%"), (f"{name}_acc{hi}", e.acc_hi, "%")]
        return out


def _as_angles(s):
    if hasattr(s, "angles"):
        return np.asarray(s.angles, float)
    if isinstance(s, dict):
        return np.array([float(s[k]) for k in STATE_PARAMETERS])
    return np.asarray(s, float)[:4]


def angular_errors(pred, gt) -> np.ndarray:
    """Absolute errors in degrees, shape (n, 4); roll wraps at 360 degrees."""
    if len(pred) != len(gt):
        raise ValueError("pred and gt differ in length")
    if len(pred) == 0:
        raise DomainError("need at least one state")
    p = np.array([_as_angles(s) for s in pred])
    g = np.array([_as_angles(s) for s in gt])
    err = np.abs(p - g)
    err[:, 3] = np.minimum(err[:, 3] % (2 * np.pi), 2 * np.pi - err[:, 3] % (2 * np.pi))
    return np.degrees(err)


def angular_metrics(pred, gt, thresholds=(10.0, 15.0)) -> AngularMetrics:
    err = angular_errors(pred, gt)
    lo, hi = thresholds
    out = {}
    for i, name in enumerate(STATE_PARAMETERS):
        e = err[:, i]
        mean, median = float(e.mean()), float(np.median(e))
        out[name] = ParameterErrors(mean, median, 100.0 * float(np.mean(e < lo)),
                                    100.0 * float(np.mean(e < hi)), median > mean)
    return AngularMetrics(out, tuple(thresholds))


def seg_metrics(pred, gt):
    """(dice, iou, precision) in percent.

    Both masks empty counts as perfect agreement for dice and IoU; an empty
    prediction leaves precision undefined and raises.
    """
    p = np.asarray(pred).astype(bool)
    g = np.asarray(gt).astype(bool)
    if p.shape != g.shape:
        raise ValueError("mask shapes differ")
    inter = np.count_nonzero(p & g)
    n_p, n_g = np.count_nonzero(p), np.count_nonzero(g)
    union = np.count_nonzero(p | g)
    if n_p == 0:
        raise DomainError("precision undefined for an empty prediction")
    dice = 200.0 * inter / (n_p + n_g)
    iou = 100.0 * inter / union
    return dice, iou, 100.0 * inter / n_p


def dice_iou(pred, gt):
    """Dice and IoU in percent with the empty/empty case scored 100."""
    p = np.asarray(pred).astype(bool)
    g = np.asarray(gt).astype(bool)
    if not p.any() and not g.any():
        return 100.0, 100.0
    inter = np.count_nonzero(p & g)
    return 200.0 * inter / (p.sum() + g.sum()), 100.0 * inter / np.count_nonzero(p | g)


def instrument_tissue_deviation(depth, K: CameraIntrinsics, tip_pixel, tissue_pixel) -> float:
    """Euclidean distance (mm) between two back-projected pixels (u, v)."""
    depth = np.asarray(depth, float)
    pts = []
    for u, v in (tip_pixel, tissue_pixel):
        ui, vi = int(round(u)), int(round(v))
        if not (0 <= vi < depth.shape[0] and 0 <= ui < depth.shape[1]) or depth[vi, ui] <= 0:
            raise DomainError(f"pixel ({u}, {v}) has no valid depth")
        pts.append(backproject(u, v, depth[vi, ui], K))
    return float(np.linalg.norm(pts[0] - pts[1]))


def fmt(x) -> str:
    """Locale-independent 6-significant-digit formatting."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".6g")


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value", "units"])
    for name, value, units in rows:
        w.writerow([name, fmt(value), units])
    return buf.getvalue()
