"""Matrix Fisher distribution on SO(3).

Density with respect to the Haar probability measure:

    M(R; Psi) = exp(tr(Psi^T R)) / n(Psi),   n(Psi) = E_Haar[exp(tr(Psi^T R))],

so n(0) = 1 and the uniform distribution has zero entropy. The normaliser and
all expectations are Monte Carlo estimates over Haar-uniform rotations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ConcentrationTooHighError, DomainError
from .geometry import quat_to_matrix

MAX_FROBENIUS = 30.0
UNCERTAINTY_SHIFT = 6.0
UNCERTAINTY_SCALE = 1.5
UNCERTAINTY_THRESHOLD = 1.0
MIN_ACCEPTANCE = 1e-5
_BATCH = 250_000


def check_psi(psi, cap: float | None = MAX_FROBENIUS) -> np.ndarray:
    psi = np.asarray(psi, float)
    if psi.shape != (3, 3):
        raise DomainError(f"Psi must be 3x3, got {psi.shape}")
    if not np.all(np.isfinite(psi)):
        raise DomainError("Psi has non-finite entries")
    if cap is not None and np.linalg.norm(psi) > cap:
        raise DomainError(f"Frobenius norm of Psi exceeds {cap}")
    return psi


def haar_rotations(n: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. Haar-uniform rotations from normalised Gaussian 4-vectors."""
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return quat_to_matrix(q)


def stratified_haar_rotations(n: int, rng: np.random.Generator) -> np.ndarray:
    """Super-Fibonacci spiral on S^3 under one random rotation.

    Every point is marginally Haar-uniform, and the set covers SO(3) far more
    evenly than i.i.d. draws.
    """
    phi = np.sqrt(2.0)
    psi = 1.533751168755204288118041
    s = np.arange(n) + 0.5
    t = s / n
    r, rr = np.sqrt(t), np.sqrt(1 - t)
    a, b = 2 * np.pi * s / phi, 2 * np.pi * s / psi
    q = np.stack([r * np.sin(a), r * np.cos(a), rr * np.sin(b), rr * np.cos(b)], axis=1)
    Q = haar_rotations(1, rng)[0]
    return Q @ quat_to_matrix(q)


def _svd(psi):
    U, S, Vt = np.linalg.svd(psi)
    return U, S, Vt


def proper_svd(psi):
    """Psi = U diag(s) V^T with U, V proper rotations; s3 may be negative."""
    U, S, Vt = _svd(psi)
    du, dv = np.linalg.det(U), np.linalg.det(Vt)
    U = U @ np.diag([1.0, 1.0, du])
    Vt = np.diag([1.0, 1.0, dv]) @ Vt
    return U, np.array([S[0], S[1], S[2] * du * dv]), Vt


def mode(psi) -> np.ndarray:
    """Rotation maximising tr(Psi^T R): U diag(1, 1, det(U V^T)) V^T."""
    psi = check_psi(psi, cap=None)
    U, S, Vt = _svd(psi)
    d = np.sign(np.linalg.det(U @ Vt)) or 1.0
    return U @ np.diag([1.0, 1.0, d]) @ Vt


def mode_is_unique(psi, tol: float = 1e-12) -> bool:
    """False when the proper singular values satisfy s2 + s3 = 0 (flat maximum)."""
    _, s, _ = proper_svd(check_psi(psi, cap=None))
    return bool(s[1] + s[2] > tol * max(1.0, abs(s[0])))


def _traces(psi, R):
    return R.reshape(-1, 9) @ psi.ravel()


@dataclass(frozen=True)
class MCEstimate:
    value: float
    stderr: float


def _haar_traces(psi, mc_samples, seed):
    rng = np.random.default_rng(seed)
    out = []
    left = mc_samples
    while left > 0:
        k = min(_BATCH, left)
        out.append(_traces(psi, haar_rotations(k, rng)))
        left -= k
    return np.concatenate(out)


def _log_mean_exp(tr):
    n = tr.size
    lme = float(logsumexp(tr) - np.log(n))
    w = np.exp(tr - tr.max())
    mean_w = w.mean()
    # delta method: se(log mean) = sd(w) / (sqrt(n) mean(w))
    se = float(w.std(ddof=1) / (np.sqrt(n) * mean_w)) if n > 1 else float("inf")
    return lme, se


def log_normalizer(psi, mc_samples: int = 1_000_000, seed: int = 0) -> MCEstimate:
    """log n(Psi) by Monte Carlo over Haar rotations, with its standard error."""
    psi = check_psi(psi, cap=None)
    if mc_samples < 100_000:
        raise DomainError("mc_samples must be at least 1e5")
    if not psi.any():
        return MCEstimate(0.0, 0.0)
    return MCEstimate(*_log_mean_exp(_haar_traces(psi, mc_samples, seed)))


def nll(psi, Y, mc_samples: int = 1_000_000, seed: int = 0) -> float:
    """-log M(Y; Psi) = log n(Psi) - tr(Psi^T Y)."""
    from .geometry import check_rotation

    Y = check_rotation(Y)
    psi = check_psi(psi, cap=None)
    return log_normalizer(psi, mc_samples, seed).value - float(np.sum(psi * Y))


def _accept(psi, R, u):
    tr = _traces(psi, R)
    top = float(np.sum(psi * mode(psi)))
    return u < np.exp(tr - top), tr


def sample(psi, n: int, seed: int = 0, probe: int = 200_000) -> np.ndarray:
    """Exact rejection sampler: Haar proposals accepted w.p. exp(tr(Psi^T R) - tr(Psi^T mode))."""
    psi = check_psi(psi)
    rng = np.random.default_rng(seed)
    out = []
    got = 0
    first = True
    while got < n:
        k = probe if first else _BATCH
        R = haar_rotations(k, rng)
        keep, _ = _accept(psi, R, rng.random(k))
        if first and keep.mean() < MIN_ACCEPTANCE:
            raise ConcentrationTooHighError(
                f"acceptance rate {keep.mean():.2e} below {MIN_ACCEPTANCE:.0e}")
        first = False
        out.append(R[keep])
        got += int(keep.sum())
    return np.concatenate(out)[:n]


@dataclass(frozen=True)
class EntropyEstimate:
    entropy: float
    uncertainty: float
    log_normalizer: float
    accepted: int


def normalized_uncertainty(entropy: float) -> float:
    return (entropy + UNCERTAINTY_SHIFT) / UNCERTAINTY_SCALE


def entropy_and_uncertainty(psi, mc_samples: int = 1_000_000, seed: int = 0) -> EntropyEstimate:
    """H = log n(Psi) - E_M[tr(Psi^T R)] and the normalised uncertainty (H + 6) / 1.5.

    One batch of ``mc_samples`` Haar proposals feeds both terms: all of them
    estimate the normaliser, and the ones surviving rejection estimate the
    expectation under M.
    """
    psi = check_psi(psi)
    if not psi.any():
        return EntropyEstimate(0.0, normalized_uncertainty(0.0), 0.0, mc_samples)
    rng = np.random.default_rng(seed)
    traces, kept = [], []
    left = mc_samples
    while left > 0:
        k = min(_BATCH, left)
        keep, tr = _accept(psi, haar_rotations(k, rng), rng.random(k))
        traces.append(tr)
        kept.append(tr[keep])
        left -= k
    tr = np.concatenate(traces)
    acc = np.concatenate(kept)
    if acc.size == 0 or acc.size < MIN_ACCEPTANCE * tr.size:
        raise ConcentrationTooHighError("too few accepted samples to estimate the entropy")
    log_n, _ = _log_mean_exp(tr)
    H = log_n - float(acc.mean())
    return EntropyEstimate(H, normalized_uncertainty(H), log_n, int(acc.size))


def is_uncertain(uncertainty: float, threshold: float = UNCERTAINTY_THRESHOLD) -> bool:
    """Flag predictions whose normalised uncertainty exceeds the filtering threshold."""
    return uncertainty > threshold


@dataclass(frozen=True)
class FisherDiagnostics:
    mode: np.ndarray
    singular_values: np.ndarray
    log_normalizer: float
    log_normalizer_stderr: float
    entropy: float
    uncertainty: float
    unique_mode: bool

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.tolist(),
            "singular_values": self.singular_values.tolist(),
            "log_normalizer": self.log_normalizer,
            "log_normalizer_stderr": self.log_normalizer_stderr,
            "entropy": self.entropy,
            "uncertainty": self.uncertainty,
            "uncertain": is_uncertain(self.uncertainty),
            "unique_mode": self.unique_mode,
        }


def diagnostics(psi, mc_samples: int = 1_000_000, seed: int = 0) -> FisherDiagnostics:
    psi = check_psi(psi)
    ln = log_normalizer(psi, mc_samples, seed)
    ent = entropy_and_uncertainty(psi, mc_samples, seed)
    return FisherDiagnostics(mode(psi), np.linalg.svd(psi, compute_uv=False), ln.value, ln.stderr,
                             ent.entropy, ent.uncertainty, mode_is_unique(psi))


# --- one distribution per scalar state parameter -------------------------------

def angle_to_rotation(theta: float) -> np.ndarray:
    """Embed a scalar angle as a rotation about +z."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_to_angle(R) -> float:
    """Signed rotation angle about +z of the projection of R onto that axis."""
    R = np.asarray(R, float)
    return float(np.arctan2(R[1, 0] - R[0, 1], R[0, 0] + R[1, 1]))


STATE_PARAMETERS = ("alpha", "beta", "gamma", "delta")


def state_from_fishers(psis: dict, mc_samples: int = 100_000, seed: int = 0) -> dict:
    """Angles and normalised uncertainties from one Psi per state parameter."""
    out = {}
    for i, name in enumerate(STATE_PARAMETERS):
        psi = check_psi(psis[name])
        ent = entropy_and_uncertainty(psi, mc_samples, seed + i)
        out[name] = {"angle": rotation_to_angle(mode(psi)), "uncertainty": ent.uncertainty,
                     "uncertain": is_uncertain(ent.uncertainty)}
    return out
