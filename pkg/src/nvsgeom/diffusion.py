"""Sampling-side diffusion utilities around a pluggable denoiser.

A denoiser is any callable ``D(x, sigma, conditioning) -> x0_hat`` returning
an array shaped like ``x``. Images live in [-1, 1] inside this module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .rng import as_rng

Denoiser = Callable[[np.ndarray, float, Any], np.ndarray]


class SamplerDivergenceError(RuntimeError):
    def __init__(self, step: int, sigma: float):
        self.step = step
        self.sigma = sigma
        super().__init__(f"denoiser returned non-finite values at step {step} (sigma={sigma:g})")


@dataclass(frozen=True)
class SigmaDistribution:
    """Log-normal training noise levels, ``ln(sigma) ~ N(p_mean, p_std^2)``."""

    p_mean: float = -0.8
    p_std: float = 1.6

    def __post_init__(self):
        if not self.p_std > 0:
            raise ValueError("p_std must be positive")


def sample_sigma(dist: SigmaDistribution, rng, size=None):
    rng = as_rng(rng)
    z = rng.standard_normal(size)
    return np.exp(dist.p_mean + dist.p_std * z)


def cfg_combine(d_cond, d_uncond, w: float):
    """Classifier-free guidance: ``d_uncond + w * (d_cond - d_uncond)``.

    Evaluated as ``(1 - w) * d_uncond + w * d_cond`` so that w = 0 and w = 1
    reproduce their inputs bit for bit.
    """
    c = np.asarray(d_cond, dtype=np.float64)
    u = np.asarray(d_uncond, dtype=np.float64)
    if c.shape != u.shape:
        raise ValueError(f"shape mismatch {c.shape} vs {u.shape}")
    return (1.0 - w) * u + w * c


def to_model_range(img01):
    return np.asarray(img01, dtype=np.float64) * 2.0 - 1.0


def to_unit_range(img):
    return (np.asarray(img, dtype=np.float64) + 1.0) / 2.0


def condition_augment(img, sigma_aug: float = 0.25, rng=None) -> tuple[np.ndarray, float]:
    """Add white Gaussian noise to a low-resolution conditioning image.

    ``img`` is expected in [-1, 1]. The noise level is returned alongside so
    it can be fed to the model as conditioning.
    """
    x = np.asarray(img, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("conditioning image has non-finite values")
    if sigma_aug < 0:
        raise ValueError("sigma_aug must be non-negative")
    if sigma_aug == 0:
        return x.copy(), 0.0
    noise = as_rng(rng).standard_normal(x.shape)
    return x + sigma_aug * noise, float(sigma_aug)


@dataclass(frozen=True)
class SamplerConfig:
    num_steps: int = 32
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")
        if not self.rho > 0:
            raise ValueError("rho must be positive")


def sigma_steps(config: SamplerConfig) -> np.ndarray:
    """Karras noise levels ``sigma_0 = sigma_max ... sigma_{N-1} = sigma_min``, then 0.

    A single-step config schedules ``[sigma_max, 0]``.
    """
    n = config.num_steps
    if n == 1:
        return np.array([config.sigma_max, 0.0])
    inv_rho = 1.0 / config.rho
    a = config.sigma_max**inv_rho
    b = config.sigma_min**inv_rho
    i = np.arange(n)
    s = (a + i / (n - 1) * (b - a)) ** config.rho
    s[0] = config.sigma_max
    s[-1] = config.sigma_min
    return np.append(s, 0.0)


def _denoise(denoiser: Denoiser, x, sigma, conditioning, step) -> np.ndarray:
    out = np.asarray(denoiser(x, float(sigma), conditioning), dtype=np.float64)
    if out.shape != x.shape:
        raise ValueError(f"denoiser changed shape {x.shape} -> {out.shape}")
    if not np.all(np.isfinite(out)):
        raise SamplerDivergenceError(step, float(sigma))
    return out


def edm_sample(
    denoiser: Denoiser,
    config: SamplerConfig,
    initial_noise,
    conditioning=None,
) -> np.ndarray:
    """Deterministic probability-flow ODE sampler (Heun, Euler on the last step).

    ``initial_noise`` must already be scaled to ``sigma_max``. The ODE is
    ``dx/dsigma = (x - D(x, sigma)) / sigma``.
    """
    x = np.array(initial_noise, dtype=np.float64, copy=True)
    steps = sigma_steps(config)
    for i, (s_cur, s_next) in enumerate(zip(steps[:-1], steps[1:])):
        denoised = _denoise(denoiser, x, s_cur, conditioning, i)
        if s_next == 0:
            # Euler to sigma = 0 lands exactly on the denoised estimate.
            x = denoised
            break
        d_cur = (x - denoised) / s_cur
        x_euler = x + (s_next - s_cur) * d_cur
        d_next = (x_euler - _denoise(denoiser, x_euler, s_next, conditioning, i)) / s_next
        x = x + (s_next - s_cur) * 0.5 * (d_cur + d_next)
    return x


def gaussian_denoiser(mu, sigma_data: float) -> Denoiser:
    """Exact posterior-mean denoiser for data ``N(mu, sigma_data^2 I)``."""
    mu = np.asarray(mu, dtype=np.float64)
    sd2 = float(sigma_data) ** 2

    def denoise(x, sigma, conditioning=None):
        s2 = sigma**2
        return (sd2 * x + s2 * mu) / (sd2 + s2)

    return denoise


def constant_denoiser(x0) -> Denoiser:
    """Denoiser that always predicts ``x0``."""
    x0 = np.asarray(x0, dtype=np.float64)

    def denoise(x, sigma, conditioning=None):
        return np.broadcast_to(x0, np.shape(x)).copy()

    return denoise
