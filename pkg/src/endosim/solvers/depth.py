"""Single-image depth from the photometric correlation objective.

Depth is ``base * exp(B(C))`` where ``B`` bilinearly upsamples a coarse
log-depth control grid ``C`` and ``base`` is a constant (or a supplied initial
depth). The objective

    1 - corr_E(PPR(depth), I) + lambda * TV(C)

is scale free, so depth is recovered up to a global factor. It is minimised
by gradient descent with forward-difference gradients and backtracking, and
runs on a downsampled working image.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from skimage.transform import resize

from ..errors import DegenerateFieldError, DomainError
from ..geometry import CameraIntrinsics
from ..photometry import attenuation_and_light, normals_from_depth

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DepthSolverConfig:
    grid_nx: int = 16
    grid_ny: int = 16
    lambda_smooth: float = 0.01
    iterations: int = 500
    step: float = 1.0
    depth_min: float = 1.0
    depth_max: float = 200.0
    seed: int = 0
    work_size: int = 56
    fd_eps: float = 1e-4
    init_noise: float = 1e-3
    tv_eps: float = 1e-3
    tol: float = 1e-9
    multiscale: bool = True

    def __post_init__(self):
        if self.grid_nx < 4 or self.grid_ny < 4:
            raise DomainError("control grid must be at least 4 x 4")
        if self.lambda_smooth < 0:
            raise DomainError("lambda_smooth must be non-negative")
        if not 0 < self.depth_min < self.depth_max:
            raise DomainError("depth bounds must be positive and ordered")


@dataclass
class DepthResult:
    depth: np.ndarray
    loss: float
    history: list = field(default_factory=list)
    control: np.ndarray | None = None
    converged: bool = False
    warning: bool = False


def hat_weights(n_pixels: int, n_nodes: int) -> np.ndarray:
    """(n_pixels, n_nodes) linear interpolation weights; nodes span the image extent."""
    x = (np.arange(n_pixels) + 0.5) / n_pixels * (n_nodes - 1)
    return np.maximum(0.0, 1.0 - np.abs(x[:, None] - np.arange(n_nodes)[None, :]))


class _Problem:
    def __init__(self, image, E, K, s, base, cfg: DepthSolverConfig):
        self.K = K
        self.s = np.asarray(s, float)
        self.cfg = cfg
        self.image = image
        self.mask = E
        self.base_log = np.log(base)
        H, W = image.shape
        self.wy = hat_weights(H, cfg.grid_ny)
        self.wx = hat_weights(W, cfg.grid_nx)
        self.lo, self.hi = np.log(cfg.depth_min), np.log(cfg.depth_max)
        self.n = int(E.sum())
        if self.n:
            y = image[E]
            self.y = y
            self.sy = y.sum()
            self.vyy = max(float(np.sum((y - y.mean()) ** 2)), 1e-300)
            self._build_groups()

    def depth(self, C):
        """Depth for control grid(s) C of shape (..., ny, nx)."""
        logd = self.base_log + np.einsum("hi,...ij,wj->...hw", self.wy, C, self.wx)
        return np.exp(np.clip(logd, self.lo, self.hi))

    def _ppr(self, C):
        D = self.depth(C)
        A, L = attenuation_and_light(D, self.K, self.s)
        N, ok = normals_from_depth(D, self.K, edge_aware=False)
        return np.where(ok, A * np.maximum(0.0, -np.einsum("...i,...i->...", L, N)), 0.0)

    def _tv(self, C):
        gx = np.diff(C, axis=-1)
        gy = np.diff(C, axis=-2)
        e2 = self.cfg.tv_eps ** 2
        n = gx.shape[-1] * gx.shape[-2] + gy.shape[-1] * gy.shape[-2]
        return (np.sqrt(gx * gx + e2).sum(axis=(-2, -1)) + np.sqrt(gy * gy + e2).sum(axis=(-2, -1))) / n

    def _sums(self, p):
        x = p[..., self.mask]
        return x.sum(axis=-1), (x * x).sum(axis=-1), (x * self.y).sum(axis=-1)

    def _corr(self, sx, sxx, sxy):
        n = self.n
        cov = sxy - sx * self.sy / n
        var = np.maximum(sxx - sx * sx / n, 1e-300)
        return cov / np.sqrt(var * self.vyy)

    def loss(self, C):
        """Objective for control grid(s) (..., ny, nx); returns shape (...)."""
        return 1.0 - self._corr(*self._sums(self._ppr(C))) + self.cfg.lambda_smooth * self._tv(C)

    def value_and_grad(self, C):
        """Loss and forward-difference gradient.

        A node perturbation only changes PPR within one pixel of the node's
        interpolation support, so nodes whose regions are disjoint are perturbed
        together and their effects on the correlation sums separated per region.
        """
        h = self.cfg.fd_eps
        p0 = self._ppr(C)
        s0 = self._sums(p0)
        f0 = float(1.0 - self._corr(*s0) + self.cfg.lambda_smooth * self._tv(C))
        ny, nx = C.shape
        dsx = np.zeros((ny, nx))
        dsxx = np.zeros((ny, nx))
        dsxy = np.zeros((ny, nx))
        for oy in range(self.stride[0]):
            for ox in range(self.stride[1]):
                labels = self.groups[(oy, ox)]
                Cp = C.copy()
                Cp[oy::self.stride[0], ox::self.stride[1]] += h
                p1 = self._ppr(Cp)
                d = (p1 - p0)[self.mask]
                lab = labels[self.mask]
                keep = lab >= 0
                nodes = ny * nx
                dsx.ravel()[:] += np.bincount(lab[keep], d[keep], nodes)
                dsxx.ravel()[:] += np.bincount(lab[keep], (p1[self.mask] ** 2 - p0[self.mask] ** 2)[keep], nodes)
                dsxy.ravel()[:] += np.bincount(lab[keep], (d * self.y)[keep], nodes)
        corr = self._corr(s0[0] + dsx, s0[1] + dsxx, s0[2] + dsxy)
        batch = np.repeat(C[None], ny * nx, axis=0)
        batch.reshape(ny * nx, -1)[np.arange(ny * nx), np.arange(ny * nx)] += h
        f = 1.0 - corr + self.cfg.lambda_smooth * self._tv(batch).reshape(ny, nx)
        return f0, (f - f0) / h

    def _build_groups(self):
        H, W = self.image.shape
        ny, nx = self.cfg.grid_ny, self.cfg.grid_nx
        sup_y = [np.flatnonzero(self.wy[:, i] > 0) for i in range(ny)]
        sup_x = [np.flatnonzero(self.wx[:, j] > 0) for j in range(nx)]

        def stride(sup):
            # smallest node stride whose dilated supports never touch
            for st in range(1, len(sup) + 1):
                ok = all(sup[i + st][0] - sup[i][-1] > 2 for i in range(len(sup) - st))
                if ok:
                    return st
            return len(sup)

        self.stride = (stride(sup_y), stride(sup_x))
        self.groups = {}
        for oy in range(self.stride[0]):
            for ox in range(self.stride[1]):
                lab = np.full((H, W), -1, dtype=np.int64)
                for i in range(oy, ny, self.stride[0]):
                    r0, r1 = max(0, sup_y[i][0] - 1), min(H, sup_y[i][-1] + 2)
                    for j in range(ox, nx, self.stride[1]):
                        c0, c1 = max(0, sup_x[j][0] - 1), min(W, sup_x[j][-1] + 2)
                        lab[r0:r1, c0:c1] = i * nx + j
                self.groups[(oy, ox)] = lab


def hat_weights_nodes(n_fine: int, n_coarse: int) -> np.ndarray:
    """Interpolate coarse node values at fine node positions (both span [0, 1])."""
    x = np.linspace(0.0, n_coarse - 1, n_fine)
    return np.maximum(0.0, 1.0 - np.abs(x[:, None] - np.arange(n_coarse)[None, :]))


def _nested_chain(n: int) -> list:
    """Grid sizes coarse to fine whose cells nest exactly: (n_c - 1) divides (n_f - 1)."""
    chain = [n]
    while True:
        m = chain[0] - 1
        divs = [d for d in range(3, m // 2 + 1) if m % d == 0]
        if not divs:
            return chain
        chain.insert(0, max(divs) + 1)


def _grid_levels(cfg):
    ys, xs = _nested_chain(cfg.grid_ny), _nested_chain(cfg.grid_nx)
    k = max(len(ys), len(xs))
    ys = [ys[0]] * (k - len(ys)) + ys
    xs = [xs[0]] * (k - len(xs)) + xs
    return list(zip(ys, xs))


def _descend(prob, C, iterations, cfg, callback, offset):
    """Gradient descent with Armijo backtracking; every accepted step lowers the loss."""
    J, g = prob.value_and_grad(C)
    history = [J]
    step = cfg.step
    for it in range(iterations):
        gg = float(np.sum(g * g))
        if gg < cfg.tol ** 2:
            return C, J, history, True
        for _ in range(40):
            C_new = C - step * g
            J_new = float(prob.loss(C_new))
            if J_new <= J - 1e-4 * step * gg:
                break
            step *= 0.5
        else:
            return C, J, history, True
        C = C_new
        J, g = prob.value_and_grad(C)
        history.append(J)
        step *= 1.5
        if callback is not None:
            callback(offset + it, J)
    return C, J, history, False


def _downsample(a, shape, order=1):
    return resize(np.asarray(a, float), shape, order=order, anti_aliasing=True, mode="edge")


def recover_depth(image, E, K: CameraIntrinsics, s=(0.0, 0.0, 0.0), config: DepthSolverConfig | None = None,
                  init_depth=None, callback=None) -> DepthResult:
    """Recover a depth map (up to scale) whose PPR field correlates with ``image``.

    ``E`` marks usable (non-specular) pixels. ``init_depth`` (full resolution)
    replaces the constant base depth; the control grid then starts at zero.
    """
    cfg = config or DepthSolverConfig()
    image = np.asarray(image, float)
    E = np.asarray(E).astype(bool)
    if image.shape != E.shape or image.shape != K.shape:
        raise ValueError("image, mask and intrinsics disagree in shape")
    if E.mean() < 0.01:
        raise DomainError("specular mask must cover at least 1% of the image")
    if image[E].var() <= 1e-12:
        raise DegenerateFieldError("image has zero variance over the mask")

    H, W = image.shape
    factor = min(1.0, cfg.work_size / max(H, W))
    Kw = K.scaled(factor)
    shape = Kw.shape
    img_w = _downsample(image, shape) if factor < 1 else image
    E_w = (_downsample(E.astype(float), shape) > 0.999) if factor < 1 else E
    if init_depth is None:
        base_full = np.full((H, W), np.sqrt(cfg.depth_min * cfg.depth_max))
    else:
        base_full = np.clip(np.asarray(init_depth, float), cfg.depth_min, cfg.depth_max)
    base_w = np.exp(_downsample(np.log(base_full), shape)) if factor < 1 else base_full
    # border pixels have one-sided normals; keep them out of the objective
    E_w = E_w.copy()
    E_w[[0, -1], :] = False
    E_w[:, [0, -1]] = False
    prob = _Problem(img_w, E_w, Kw, s, base_w, cfg)

    rng = np.random.default_rng(cfg.seed)
    levels = _grid_levels(cfg) if cfg.multiscale else [(cfg.grid_ny, cfg.grid_nx)]
    budgets = np.diff(np.linspace(0, cfg.iterations, len(levels) + 1).round().astype(int))
    C = cfg.init_noise * rng.standard_normal(levels[0])
    history = []
    converged = False
    J = np.inf
    for (ny, nx), budget in zip(levels, budgets):
        if C.shape != (ny, nx):
            C = hat_weights_nodes(ny, C.shape[0]) @ C @ hat_weights_nodes(nx, C.shape[1]).T
        lvl = replace(cfg, grid_ny=ny, grid_nx=nx)
        prob = _Problem(img_w, E_w, Kw, s, base_w, lvl)
        C, J, hist, converged = _descend(prob, C, budget, cfg, callback, len(history))
        # nested grids transfer exactly, so a level starts where the last one ended
        history.extend(hist[1:] if history else hist)
    full = _Problem(np.zeros((H, W)), np.zeros((H, W), bool), K, s, base_full,
                    replace(cfg, grid_ny=C.shape[0], grid_nx=C.shape[1]))
    depth = full.depth(C)
    if not converged:
        log.warning("depth recovery stopped at the iteration budget (loss %.6g)", J)
    return DepthResult(depth, J, history, C, converged, not converged)
