"""Epipolar geometry on token grids and additive cross-view attention bias."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, softmax

from .camera import CameraIntrinsics, RigidTransform

logger = logging.getLogger(__name__)

DEGENERATE_TRANSLATION = 1e-8
DEGENERATE_LINE = 1e-12
SENTINEL_DISTANCE = 1e4


class DegenerateGeometryError(ValueError):
    """Raised for pure rotations, where no epipolar geometry exists."""


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=np.float64)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def fundamental_matrix(
    k_src: CameraIntrinsics, k_dst: CameraIntrinsics, pose: RigidTransform
) -> np.ndarray:
    """``F = K_dst^-T [t]x R K_src^-1`` scaled to unit Frobenius norm.

    ``pose`` maps source-camera to destination-camera coordinates, and
    ``x_dst^T F x_src = 0`` holds for homogeneous pixel correspondences.
    """
    t = pose.translation
    if np.linalg.norm(t) < DEGENERATE_TRANSLATION:
        raise DegenerateGeometryError("translation too small for epipolar geometry")
    f = np.linalg.inv(k_dst.matrix()).T @ skew(t) @ pose.rotation @ np.linalg.inv(k_src.matrix())
    return f / np.linalg.norm(f)


def token_centers(grid: tuple[int, int], image_size: tuple[int, int]) -> np.ndarray:
    """Homogeneous pixel coordinates ``(N, 3)`` of token centers, row-major."""
    gh, gw = grid
    h, w = image_size
    if gh < 1 or gw < 1:
        raise ValueError("grid must be at least 1x1")
    ys = (np.arange(gh) + 0.5) * (h / gh)
    xs = (np.arange(gw) + 0.5) * (w / gw)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel(), np.ones(gh * gw)], axis=1)


@dataclass(frozen=True, eq=False)
class EpipolarDistanceMatrix:
    """Distances ``(H_d*W_d, H_s*W_s)`` from source tokens to destination epipolar lines."""

    values: np.ndarray
    degenerate_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def has_degenerate(self) -> bool:
        return bool(self.degenerate_rows.any())


def epipolar_distance_matrix(
    f: np.ndarray,
    grid_dst: tuple[int, int],
    grid_src: tuple[int, int],
    image_size: tuple[int, int],
) -> EpipolarDistanceMatrix:
    """Perpendicular pixel distance from each source token to each destination token's line.

    Row ``d`` uses the source-view line ``l = F^T x_d``. Rows whose line is
    degenerate (normal shorter than 1e-12) are filled with a 1e4 px sentinel
    and flagged in ``degenerate_rows``.
    """
    x_d = token_centers(grid_dst, image_size)
    x_s = token_centers(grid_src, image_size)
    lines = x_d @ np.asarray(f, dtype=np.float64)  # rows are (F^T x_d)^T
    norm = np.hypot(lines[:, 0], lines[:, 1])
    degenerate = norm < DEGENERATE_LINE
    safe = np.where(degenerate, 1.0, norm)
    dist = np.abs(lines @ x_s.T) / safe[:, None]
    dist[degenerate] = SENTINEL_DISTANCE
    if degenerate.any():
        logger.warning("%d degenerate epipolar lines", int(degenerate.sum()))
    return EpipolarDistanceMatrix(dist, degenerate)


@dataclass(frozen=True, eq=False)
class EpipolarMixParams:
    """Per-head amplitude ``m``, temperature ``tau``, cutoff ``c`` (px) and bias ``b``."""

    m: np.ndarray
    tau: np.ndarray
    c: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        arrs = [np.atleast_1d(np.asarray(getattr(self, k), dtype=np.float64)) for k in "m tau c b".split()]
        arrs = np.broadcast_arrays(*arrs)
        for name, a in zip(("m", "tau", "c", "b"), arrs):
            if a.ndim != 1 or not np.all(np.isfinite(a)):
                raise ValueError(f"mix parameter {name} must be a finite per-head vector")
            object.__setattr__(self, name, a.copy())

    @property
    def heads(self) -> int:
        return len(self.m)

    @classmethod
    def initial(cls, heads: int, tau: float = 1.0, cutoff: float = 1.0) -> EpipolarMixParams:
        """Zero amplitude and bias, so the bias starts out identically zero."""
        z = np.zeros(heads)
        return cls(z, np.full(heads, tau), np.full(heads, cutoff), z)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("m", "tau", "c", "b")}

    @classmethod
    def from_dict(cls, d: dict) -> EpipolarMixParams:
        return cls(d["m"], d["tau"], d["c"], d["b"])


def attention_bias(d, params: EpipolarMixParams) -> np.ndarray:
    """``m * sigmoid(tau * (c - D)) + b`` for every head, shape ``(heads, *D.shape)``."""
    dist = d.values if isinstance(d, EpipolarDistanceMatrix) else np.asarray(d, dtype=np.float64)
    shape = (-1,) + (1,) * dist.ndim
    m, tau, c, b = (p.reshape(shape) for p in (params.m, params.tau, params.c, params.b))
    return m * expit(tau * (c - dist[None])) + b


def zero_bias(heads: int, n_dst: int, n_src: int) -> np.ndarray:
    """Neutral bias used when the pair has no epipolar geometry."""
    return np.zeros((heads, n_dst, n_src))


@dataclass(frozen=True, eq=False)
class JointAttentionResult:
    output: np.ndarray  # (N_dst, dim)
    weights: np.ndarray  # (heads, N_dst, N_dst + N_src); columns [self | cross]

    @property
    def cross_weights(self) -> np.ndarray:
        n_dst = self.weights.shape[1]
        return self.weights[:, :, n_dst:]


def joint_attention(
    q_dst,
    k_dst,
    v_dst,
    k_src,
    v_src,
    bias=None,
    heads: int = 1,
    return_weights: bool = False,
):
    """Destination queries attend over concatenated destination and source keys.

    ``bias`` (``(heads, N_dst, N_src)`` or a shared ``(N_dst, N_src)``) is
    added only to the cross-view block of the logits. Logits are scaled by
    ``1/sqrt(dim/heads)``.
    """
    q, kd, vd, ks, vs = (np.asarray(a, dtype=np.float64) for a in (q_dst, k_dst, v_dst, k_src, v_src))
    for name, a in zip(("q_dst", "k_dst", "v_dst", "k_src", "v_src"), (q, kd, vd, ks, vs)):
        if a.ndim != 2:
            raise ValueError(f"{name} must be (tokens, dim), got {a.shape}")
    n_dst, dim = q.shape
    n_src = ks.shape[0]
    if kd.shape != (n_dst, dim) or vd.shape != (n_dst, dim):
        raise ValueError("destination keys/values must match queries")
    if ks.shape[1] != dim or vs.shape != ks.shape:
        raise ValueError("source keys/values must be (N_src, dim)")
    if heads < 1 or dim % heads:
        raise ValueError(f"dim {dim} not divisible by {heads} heads")
    hd = dim // heads

    def split(a):
        return a.reshape(len(a), heads, hd).transpose(1, 0, 2)

    keys = np.concatenate([split(kd), split(ks)], axis=1)
    vals = np.concatenate([split(vd), split(vs)], axis=1)
    logits = split(q) @ keys.transpose(0, 2, 1) / np.sqrt(hd)
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.ndim == 2:
            bias = bias[None]
        if bias.shape not in ((heads, n_dst, n_src), (1, n_dst, n_src)):
            raise ValueError(f"bias shape {bias.shape} incompatible with ({heads}, {n_dst}, {n_src})")
        logits[:, :, n_dst:] += bias
    weights = softmax(logits, axis=-1)  # subtracts the row max internally
    out = (weights @ vals).transpose(1, 0, 2).reshape(n_dst, dim)
    if return_weights:
        return JointAttentionResult(out, weights)
    return out
