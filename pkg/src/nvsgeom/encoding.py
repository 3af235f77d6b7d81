"""Geometric conditioning encodings: pose embedding, depth, warped coordinates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraIntrinsics, RigidTransform
from .stats import RunningMoments

EMBEDDING_SIZE = 20
STD_FLOOR = 1e-6
SENTINEL = -1.0


def pose_embedding(
    pose_d_to_s: RigidTransform, k_src: CameraIntrinsics, k_dst: CameraIntrinsics
) -> np.ndarray:
    """20-element camera encoding.

    Layout: the 3x4 destination-to-source transform flattened row-major (12),
    then source focal (fx, fy), source principal point (cx, cy), destination
    focal and destination principal point.
    """
    return np.concatenate(
        [
            pose_d_to_s.matrix3x4().reshape(-1),
            k_src.focal,
            k_src.principal_point,
            k_dst.focal,
            k_dst.principal_point,
        ]
    ).astype(np.float64)


@dataclass(frozen=True, eq=False)
class EmbeddingStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        std = np.asarray(self.std, dtype=np.float64).reshape(-1)
        if mean.shape != (EMBEDDING_SIZE,) or std.shape != (EMBEDDING_SIZE,):
            raise ValueError(f"stats must have {EMBEDDING_SIZE} elements")
        if np.any(std < STD_FLOOR):
            raise ValueError(f"std entries must be >= {STD_FLOOR}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def from_embeddings(cls, embeddings) -> EmbeddingStats:
        """Population mean/std over an iterable of embeddings (or an (n, 20) array)."""
        acc = RunningMoments(EMBEDDING_SIZE, full_covariance=False)
        if isinstance(embeddings, np.ndarray):
            acc.update(embeddings)
        else:
            for e in embeddings:
                acc.update(e)
        if acc.n == 0:
            raise ValueError("no embeddings")
        std = np.sqrt(acc.variance(ddof=0))
        return cls(acc.mean, np.maximum(std, STD_FLOOR))

    def rescaled_intrinsics(self, factor: float) -> EmbeddingStats:
        """Statistics for the same dataset at ``factor`` times the resolution.

        Intrinsics entries (12..19) scale linearly, the pose block does not.
        """
        scale = np.ones(EMBEDDING_SIZE)
        scale[12:] = factor
        return EmbeddingStats(self.mean * scale, np.maximum(self.std * scale, STD_FLOOR))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> EmbeddingStats:
        return cls(np.array(d["mean"]), np.array(d["std"]))


def normalize_embedding(e, stats: EmbeddingStats) -> np.ndarray:
    """Standardize one embedding (or a stack of them) elementwise."""
    return (np.asarray(e, dtype=np.float64) - stats.mean) / stats.std


def normalize_depth(depth) -> np.ndarray:
    """Invert, divide by the max, then standardize over the map.

    Nearer pixels end up larger. The result is invariant to a global scale of
    the input depth.
    """
    d = np.asarray(depth, dtype=np.float64)
    if not np.all(np.isfinite(d)):
        raise ValueError("depth map has non-finite entries")
    if np.any(d <= 0):
        raise ValueError("depth map must be strictly positive")
    inv = 1.0 / d
    inv = inv / inv.max()
    return (inv - inv.mean()) / max(inv.std(), STD_FLOOR)


def pixel_grid(height: int, width: int) -> np.ndarray:
    """``(H, W, 2)`` grid of (column, row) pixel indices."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return np.stack([xs, ys], axis=-1)


def warp_coordinates(
    depth_src,
    k_src: CameraIntrinsics,
    k_dst: CameraIntrinsics,
    pose: RigidTransform,
    out_size: tuple[int, int],
) -> np.ndarray:
    """Forward-splat the source pixel grid into the destination view.

    Each source pixel center is lifted with its z-depth, moved by ``pose``
    (source camera -> destination camera) and projected with ``k_dst``. The
    destination pixel containing the projection receives the source
    (column, row) index; collisions keep the nearest point, ties going to the
    lowest source index. Points at or behind the destination camera are
    dropped and unfilled pixels hold ``(-1, -1)``.

    Returns an ``(H_out, W_out, 2)`` float grid.
    """
    depth = np.asarray(depth_src, dtype=np.float64)
    if depth.ndim != 2:
        raise ValueError("depth map must be 2-D")
    if not np.all(np.isfinite(depth)) or np.any(depth <= 0):
        raise ValueError("depth must be finite and strictly positive")
    h, w = depth.shape
    h_out, w_out = out_size

    src_idx = pixel_grid(h, w).reshape(-1, 2)
    pix = np.concatenate([src_idx + 0.5, np.ones((len(src_idx), 1))], axis=1)
    rays = pix @ np.linalg.inv(k_src.matrix()).T
    pts = pose.apply(rays * depth.reshape(-1, 1))
    z = pts[:, 2]

    proj = pts @ k_dst.matrix().T
    with np.errstate(divide="ignore", invalid="ignore"):
        u = proj[:, 0] / proj[:, 2]
        v = proj[:, 1] / proj[:, 2]
    front = z > 0
    col = np.floor(np.where(front, u, -1.0))
    row = np.floor(np.where(front, v, -1.0))
    keep = front & (col >= 0) & (col < w_out) & (row >= 0) & (row < h_out)

    grid = np.full((h_out * w_out, 2), SENTINEL)
    if np.any(keep):
        order = np.flatnonzero(keep)
        target = (row[order] * w_out + col[order]).astype(np.int64)
        # Sort by target pixel, then depth, then source index; first per target wins.
        perm = np.lexsort((order, z[order], target))
        target, order = target[perm], order[perm]
        first = np.ones(len(target), dtype=bool)
        first[1:] = target[1:] != target[:-1]
        grid[target[first]] = src_idx[order[first]]
    return grid.reshape(h_out, w_out, 2)


def fourier_features(
    grid,
    channels: int = 128,
    size: tuple[int, int] | None = None,
) -> np.ndarray:
    """Sin/cos features of a coordinate grid.

    ``grid`` holds (column, row) pixel indices of an image of ``size`` =
    (height, width), defaulting to the grid's own shape. Coordinates are
    mapped to [-1, 1] through their pixel centers, then encoded at
    frequencies ``2**k * pi`` for ``k < channels // 4``. Channel order is
    ``[sin, cos] x frequency x (x, y)``. Sentinel pixels get all-zero channels.
    """
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 3 or g.shape[-1] != 2:
        raise ValueError(f"grid must be (H, W, 2), got {g.shape}")
    if channels <= 0 or channels % 4:
        raise ValueError("channels must be a positive multiple of 4")
    h, w = g.shape[:2] if size is None else size
    holes = np.all(g == SENTINEL, axis=-1)

    norm = np.empty_like(g)
    norm[..., 0] = (g[..., 0] + 0.5) / w * 2.0 - 1.0
    norm[..., 1] = (g[..., 1] + 0.5) / h * 2.0 - 1.0
    nfreq = channels // 4
    freqs = np.pi * 2.0 ** np.arange(nfreq)
    ang = norm[..., None, :] * freqs[:, None]  # (H, W, F, 2)
    feats = np.stack([np.sin(ang), np.cos(ang)], axis=-3)  # (H, W, 2, F, 2)
    feats = feats.reshape(*g.shape[:2], channels)
    feats[holes] = 0.0
    return feats
