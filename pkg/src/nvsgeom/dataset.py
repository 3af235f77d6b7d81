"""RealEstate10K-style camera files, scene manifests and view-pair sampling.

Camera file grammar (whitespace separated, one record per line)::

    line 1      video URL (free text, kept as ``source_uri``)
    line 2..    timestamp fx fy cx cy 0 0 r11 r12 r13 t1 r21 r22 r23 t2 r31 r32 r33 t3

=========  =======  ====================================================
field      count    meaning
=========  =======  ====================================================
timestamp  1        integer, microseconds, strictly increasing
fx fy      2        focal lengths divided by image width / height
cx cy      2        principal point divided by image width / height
0 0        2        placeholders (distortion slots), ignored on read
pose       12       row-major 3x4 world-to-camera ``[R | t]``
=========  =======  ====================================================

Blank lines are ignored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal

import numpy as np

from .camera import (
    CameraExtrinsics,
    CameraIntrinsics,
    InvalidRotationError,
    RelativePose,
    relative_pose,
)
from .encoding import EmbeddingStats, pose_embedding
from .rng import as_rng

FIELDS_PER_LINE = 19
EVAL_RANGES = {"mid": (30, 60), "long": (60, 120)}
RangeLabel = Literal["training", "mid", "long"]


class CameraFileError(ValueError):
    def __init__(self, message: str, lineno: int | None = None, source: str | None = None):
        self.lineno = lineno
        self.source = source
        where = ""
        if source:
            where += f"{source}:"
        if lineno is not None:
            where += f"{lineno}:"
        super().__init__(f"{where} {message}" if where else message)


@dataclass(frozen=True)
class FrameRecord:
    timestamp: int
    intrinsics: CameraIntrinsics  # resolution-normalized (width == height == 1)
    extrinsics: CameraExtrinsics
    frame_index: int

    def intrinsics_at(self, width: float, height: float) -> CameraIntrinsics:
        return self.intrinsics.at_resolution(width, height)


@dataclass(frozen=True)
class SceneManifest:
    scene_id: str
    frames: tuple[FrameRecord, ...]
    source_uri: str = ""

    def __post_init__(self):
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        if not frames:
            raise ValueError(f"scene {self.scene_id!r} has no frames")
        for i, f in enumerate(frames):
            if f.frame_index != i:
                raise ValueError(f"scene {self.scene_id!r}: frame_index {f.frame_index} at position {i}")
            if i and f.timestamp <= frames[i - 1].timestamp:
                raise ValueError(f"scene {self.scene_id!r}: timestamps not strictly increasing at frame {i}")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def timestamp_range(self) -> tuple[int, int]:
        return (self.frames[0].timestamp, self.frames[-1].timestamp)


def parse_camera_file(text: bytes | str, scene_id: str, source: str | None = None) -> SceneManifest:
    """Parse one camera file. Any malformed line raises :class:`CameraFileError`."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as e:
            raise CameraFileError(f"not UTF-8 text: {e}", source=source) from None
    lines = text.splitlines()
    if not lines:
        raise CameraFileError("empty file", source=source)
    header = lines[0].strip()
    frames: list[FrameRecord] = []
    prev_ts = None
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != FIELDS_PER_LINE:
            raise CameraFileError(
                f"expected {FIELDS_PER_LINE} fields, got {len(parts)}", lineno, source
            )
        try:
            ts = int(parts[0])
        except ValueError:
            raise CameraFileError(f"bad timestamp {parts[0]!r}", lineno, source) from None
        try:
            vals = [float(p) for p in parts[1:]]
        except ValueError as e:
            raise CameraFileError(str(e), lineno, source) from None
        if not all(math.isfinite(v) for v in vals):
            raise CameraFileError("non-finite value", lineno, source)
        if prev_ts is not None and ts <= prev_ts:
            raise CameraFileError(f"timestamp {ts} not after {prev_ts}", lineno, source)
        prev_ts = ts
        fx, fy, cx, cy = vals[:4]
        try:
            k = CameraIntrinsics(fx, fy, cx, cy, 1.0, 1.0)
        except ValueError as e:
            raise CameraFileError(f"bad intrinsics: {e}", lineno, source) from None
        pose = np.array(vals[6:], dtype=np.float64).reshape(3, 4)
        try:
            ext = CameraExtrinsics(pose[:, :3], pose[:, 3])
        except InvalidRotationError as e:
            raise CameraFileError(f"bad pose: {e}", lineno, source) from None
        frames.append(FrameRecord(ts, k, ext, len(frames)))
    if not frames:
        raise CameraFileError("no frame records", source=source)
    return SceneManifest(scene_id, tuple(frames), header)


def read_camera_file(path: str | Path) -> SceneManifest:
    path = Path(path)
    return parse_camera_file(path.read_bytes(), path.stem, source=str(path))


def serialize_camera_file(scene: SceneManifest) -> str:
    """Inverse of :func:`parse_camera_file`; floats are written with ``repr``
    so a re-parse reproduces every value bit for bit."""
    out = [scene.source_uri]
    for f in scene.frames:
        k = f.intrinsics
        pose = f.extrinsics.matrix3x4().reshape(-1)
        vals = [k.fx, k.fy, k.cx, k.cy]
        out.append(
            " ".join(
                [str(int(f.timestamp))]
                + [repr(float(v)) for v in vals]
                + ["0", "0"]
                + [repr(float(v)) for v in pose]
            )
        )
    return "\n".join(out) + "\n"


@dataclass(frozen=True)
class PairSample:
    scene_id: str
    src_index: int
    dst_index: int
    range_label: RangeLabel
    relative_pose: RelativePose
    k_src: CameraIntrinsics
    k_dst: CameraIntrinsics

    def __post_init__(self):
        if self.src_index == self.dst_index:
            raise ValueError("source and destination must differ")
        gap = abs(self.dst_index - self.src_index)
        if self.range_label in EVAL_RANGES:
            lo, hi = EVAL_RANGES[self.range_label]
            if not lo <= gap <= hi:
                raise ValueError(f"gap {gap} outside {self.range_label} range [{lo}, {hi}]")
        elif self.range_label != "training":
            raise ValueError(f"unknown range label {self.range_label!r}")

    @property
    def gap(self) -> int:
        return abs(self.dst_index - self.src_index)

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "src_index": self.src_index,
            "dst_index": self.dst_index,
            "range_label": self.range_label,
            "relative_pose": self.relative_pose.to_dict(),
            "k_src": self.k_src.to_dict(),
            "k_dst": self.k_dst.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> PairSample:
        return cls(
            scene_id=str(d["scene_id"]),
            src_index=int(d["src_index"]),
            dst_index=int(d["dst_index"]),
            range_label=d["range_label"],
            relative_pose=RelativePose.from_dict(d["relative_pose"]),
            k_src=CameraIntrinsics.from_dict(d["k_src"]),
            k_dst=CameraIntrinsics.from_dict(d["k_dst"]),
        )


def make_pair_sample(scene: SceneManifest, src: int, dst: int, label: RangeLabel) -> PairSample:
    a, b = scene.frames[src], scene.frames[dst]
    return PairSample(
        scene.scene_id,
        int(src),
        int(dst),
        label,
        relative_pose(a.extrinsics, b.extrinsics),
        a.intrinsics,
        b.intrinsics,
    )


def sample_training_pair(scene: SceneManifest, rng) -> PairSample:
    """Uniform over all ordered pairs of distinct frames."""
    n = len(scene)
    if n < 2:
        raise ValueError(f"scene {scene.scene_id!r} has a single frame")
    rng = as_rng(rng)
    src = int(rng.integers(n))
    dst = int(rng.integers(n - 1))
    if dst >= src:
        dst += 1
    return make_pair_sample(scene, src, dst, "training")


def _eval_destinations(n: int, src: int, lo: int, hi: int) -> np.ndarray:
    before = np.arange(max(src - hi, 0), max(src - lo + 1, 0))
    after = np.arange(min(src + lo, n), min(src + hi + 1, n))
    return np.concatenate([before, after])


def _eval_counts(n: int, lo: int, hi: int) -> np.ndarray:
    s = np.arange(n)
    before = np.clip(s - lo + 1, 0, None) - np.clip(s - hi, 0, None)
    after = np.clip(n - (s + lo), 0, None) - np.clip(n - (s + hi + 1), 0, None)
    return np.clip(before, 0, None) + np.clip(after, 0, None)


def count_pairs(scene: SceneManifest, range_label: str) -> int:
    """Number of admissible ordered (src, dst) pairs for a range."""
    n = len(scene)
    if range_label == "training":
        return n * (n - 1)
    lo, hi = EVAL_RANGES[range_label]
    return int(_eval_counts(n, lo, hi).sum())


def sample_eval_pair(
    scene: SceneManifest,
    range_label: Literal["mid", "long"],
    rng,
    src_index: int | None = None,
) -> PairSample | None:
    """Sample a test pair whose frame gap lies in the requested range.

    The source is uniform over frames that have at least one admissible
    destination; the destination is uniform over those, on either side of the
    source. Returns ``None`` when nothing qualifies. ``src_index`` pins the
    source frame.
    """
    if range_label not in EVAL_RANGES:
        raise ValueError(f"unknown range {range_label!r}")
    lo, hi = EVAL_RANGES[range_label]
    rng = as_rng(rng)
    n = len(scene)
    counts = _eval_counts(n, lo, hi)
    if src_index is None:
        sources = np.flatnonzero(counts)
        if len(sources) == 0:
            return None
        src = int(sources[rng.integers(len(sources))])
    else:
        src = int(src_index)
        if not 0 <= src < n or counts[src] == 0:
            return None
    dsts = _eval_destinations(n, src, lo, hi)
    dst = int(dsts[rng.integers(len(dsts))])
    return make_pair_sample(scene, src, dst, range_label)


def compute_pose_stats(pairs: Iterable[PairSample]) -> EmbeddingStats:
    """Population mean/std of pose embeddings over a stream of pairs.

    Each pair contributes the embedding of its destination-to-source
    transform together with its source and destination intrinsics.
    """
    count = 0

    def embeddings():
        nonlocal count
        for p in pairs:
            count += 1
            yield pose_embedding(p.relative_pose.inverse(), p.k_src, p.k_dst)

    try:
        stats = EmbeddingStats.from_embeddings(embeddings())
    except ValueError:
        if count == 0:
            raise ValueError("empty pair stream") from None
        raise
    if count < 2:
        raise ValueError("need at least two pairs")
    return stats
