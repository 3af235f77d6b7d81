"""PSNR and Fréchet distances between Gaussian fits of feature sets."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .stats import RunningMoments

COVARIANCE_CONVENTION = "unbiased (n-1)"
SYMMETRY_TOL = 1e-9
EIG_CLAMP = 1e-9
_CHUNK = 8192


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]; ``inf`` when equal."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


@dataclass(frozen=True, eq=False)
class GaussianSummary:
    mean: np.ndarray
    cov: np.ndarray
    n: int = 0

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        cov = np.asarray(self.cov, dtype=np.float64)
        d = len(mean)
        if cov.shape != (d, d):
            raise ValueError(f"covariance must be {d}x{d}, got {cov.shape}")
        scale = max(1.0, float(np.abs(cov).max()) if cov.size else 1.0)
        if np.abs(cov - cov.T).max(initial=0.0) > SYMMETRY_TOL * scale:
            raise ValueError("covariance is not symmetric")
        if d and np.linalg.eigvalsh(0.5 * (cov + cov.T)).min() < -SYMMETRY_TOL * scale:
            raise ValueError("covariance is not positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return len(self.mean)


def _features(f) -> np.ndarray:
    x = np.asarray(f, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"features must be (n, d), got {x.shape}")
    if len(x) < 2:
        raise ValueError("need at least two feature vectors")
    if not np.all(np.isfinite(x)):
        raise ValueError("features contain non-finite values")
    return x


def summarize(f, chunk: int = _CHUNK) -> GaussianSummary:
    """Sample mean and 1/(n-1) covariance, accumulated in one pass over chunks."""
    x = _features(f)
    acc = RunningMoments(x.shape[1])
    for start in range(0, len(x), chunk):
        acc.update(x[start : start + chunk])
    return GaussianSummary(acc.mean, acc.covariance(ddof=1), acc.n)


def _clamp(w: np.ndarray) -> np.ndarray:
    # Eigenvalues below 1e-9 * lambda_max are rounding noise of a PSD matrix.
    floor = EIG_CLAMP * max(float(w.max(initial=0.0)), 0.0)
    return np.where(w < floor, 0.0, w)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    return (v * np.sqrt(_clamp(w))) @ v.T


def _trace_sqrt(m: np.ndarray) -> float:
    w = np.linalg.eigvalsh(0.5 * (m + m.T))
    return float(np.sqrt(_clamp(w)).sum())


def frechet_distance(a: GaussianSummary, b: GaussianSummary) -> float:
    """``|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)``.

    The cross term is evaluated on the symmetric PSD product, never on the
    non-symmetric ``S_a S_b``.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch {a.dim} vs {b.dim}")
    diff = a.mean - b.mean
    root_a = _psd_sqrt(a.cov)
    cross = _trace_sqrt(root_a @ b.cov @ root_a)
    d = float(diff @ diff) + float(np.trace(a.cov) + np.trace(b.cov)) - 2.0 * cross
    return max(d, 0.0)


def joint_features(src, dst) -> np.ndarray:
    s = _features(src)
    t = _features(dst)
    if len(s) != len(t):
        raise ValueError(f"unaligned pairs: {len(s)} source vs {len(t)} destination features")
    return np.concatenate([s, t], axis=1)


def joint_frechet_distance(src_a, dst_a, src_b, dst_b) -> float:
    """Fréchet distance between Gaussians of per-pair concatenated ``(src | dst)`` features."""
    ja = joint_features(src_a, dst_a)
    jb = joint_features(src_b, dst_b)
    return frechet_distance(summarize(ja), summarize(jb))
