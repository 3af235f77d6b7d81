"""Streaming first and second moments with exact pairwise merging."""

from __future__ import annotations

import numpy as np


class RunningMoments:
    """Single-pass mean and scatter-matrix accumulator.

    Each batch is centered on its own mean before being folded in with the
    Chan et al. pairwise update, so accumulation never forms raw second
    moments and stays stable for data far from the origin. Two accumulators
    over disjoint data merge exactly via :meth:`merge`.
    """

    def __init__(self, dim: int, full_covariance: bool = True):
        self.dim = int(dim)
        self.full = full_covariance
        self.n = 0
        self.mean = np.zeros(self.dim)
        self._m2 = np.zeros((self.dim, self.dim) if full_covariance else self.dim)

    def update(self, batch) -> RunningMoments:
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"expected (n, {self.dim}) batch, got {x.shape}")
        if len(x) == 0:
            return self
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite values in batch")
        mu = x.mean(axis=0)
        c = x - mu
        m2 = c.T @ c if self.full else np.einsum("ij,ij->j", c, c)
        self._fold(len(x), mu, m2)
        return self

    def _fold(self, nb: int, mean_b: np.ndarray, m2_b: np.ndarray) -> None:
        na = self.n
        n = na + nb
        delta = mean_b - self.mean
        self.mean = self.mean + delta * (nb / n)
        corr = np.outer(delta, delta) if self.full else delta * delta
        self._m2 = self._m2 + m2_b + corr * (na * nb / n)
        self.n = n

    def merge(self, other: RunningMoments) -> RunningMoments:
        if other.dim != self.dim or other.full != self.full:
            raise ValueError("incompatible accumulators")
        if other.n:
            self._fold(other.n, other.mean, other._m2)
        return self

    def covariance(self, ddof: int = 1) -> np.ndarray:
        if self.n - ddof <= 0:
            raise ValueError(f"need more than {ddof} samples, have {self.n}")
        cov = self._m2 / (self.n - ddof)
        if self.full:
            cov = 0.5 * (cov + cov.T)
        return cov

    def variance(self, ddof: int = 1) -> np.ndarray:
        cov = self.covariance(ddof)
        return np.diag(cov).copy() if self.full else cov
