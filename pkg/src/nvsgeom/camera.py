"""Pinhole cameras and rigid-transform algebra.

Extrinsics follow the world-to-camera convention ``x_cam = R @ x_world + t``
with COLMAP axes (x left, y down, z forward). Pixel coordinates are
continuous: pixel ``i`` covers ``[i, i + 1)`` and its center sits at
``i + 0.5``, so rescaling an image by ``s`` rescales every pixel quantity of
the intrinsics by exactly ``s``.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist

logger = logging.getLogger(__name__)

ORTHONORMAL_TOL = 1e-6
# Rotations closer than this to orthonormal are stored untouched, which keeps
# text round-trips bit-exact.
_REPROJECT_TOL = 1e-12


class InvalidRotationError(ValueError):
    pass


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def as_rotation(r, tol: float = ORTHONORMAL_TOL) -> np.ndarray:
    """Validate a 3x3 rotation, projecting it onto SO(3) if it is slightly off.

    Raises :class:`InvalidRotationError` when ``|R^T R - I|`` exceeds ``tol``
    or the determinant is not +1.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise InvalidRotationError(f"rotation must be 3x3, got {r.shape}")
    if not np.all(np.isfinite(r)):
        raise InvalidRotationError("rotation has non-finite entries")
    err = np.abs(r.T @ r - np.eye(3)).max()
    det = np.linalg.det(r)
    if err > tol or abs(det - 1.0) > tol:
        raise InvalidRotationError(
            f"not a rotation (orthonormality error {err:.3g}, det {det:.6f})"
        )
    if err > _REPROJECT_TOL:
        u, _, vt = np.linalg.svd(r)
        r = u @ vt
    return r


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: float
    height: float

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy, self.width, self.height)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("intrinsics must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )

    def matrix(self) -> np.ndarray:
        return intrinsics_matrix(self)

    @property
    def focal(self) -> tuple[float, float]:
        return (self.fx, self.fy)

    @property
    def principal_point(self) -> tuple[float, float]:
        return (self.cx, self.cy)

    def at_resolution(self, width: float, height: float) -> CameraIntrinsics:
        """Same camera, for an image resized to ``width`` x ``height``.

        With resolution-normalized intrinsics (``width == height == 1``) this
        is the denormalization step.
        """
        sx = width / self.width
        sy = height / self.height
        return CameraIntrinsics(
            self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> CameraIntrinsics:
        return cls(**{f.name: float(d[f.name]) for f in dataclasses.fields(cls)})


def intrinsics_matrix(k: CameraIntrinsics) -> np.ndarray:
    return np.array(
        [[k.fx, 0.0, k.cx], [0.0, k.fy, k.cy], [0.0, 0.0, 1.0]], dtype=np.float64
    )


def rescale_intrinsics(k: CameraIntrinsics, factor: float) -> CameraIntrinsics:
    """Scale every pixel quantity (focal lengths, principal point, size)."""
    if not factor > 0:
        raise ValueError(f"scale factor must be positive, got {factor}")
    return CameraIntrinsics(
        k.fx * factor,
        k.fy * factor,
        k.cx * factor,
        k.cy * factor,
        k.width * factor,
        k.height * factor,
    )


def center_crop_intrinsics(k: CameraIntrinsics, width: float, height: float) -> CameraIntrinsics:
    """Intrinsics after cutting a centered ``width`` x ``height`` window."""
    if width > k.width or height > k.height:
        raise ValueError("crop larger than image")
    ox = (k.width - width) / 2.0
    oy = (k.height - height) / 2.0
    return CameraIntrinsics(k.fx, k.fy, k.cx - ox, k.cy - oy, width, height)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation plus translation, ``x -> R @ x + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise ValueError("translation must be a finite 3-vector")
        object.__setattr__(self, "rotation", _readonly(as_rotation(self.rotation)))
        object.__setattr__(self, "translation", _readonly(t))

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=np.float64)
        if m.shape not in ((3, 4), (4, 4)):
            raise ValueError(f"expected 3x4 or 4x4 matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def matrix3x4(self) -> np.ndarray:
        return self.matrix()[:3]

    def inverse(self):
        inv = np.linalg.inv(self.matrix())
        return type(self).from_matrix(inv)

    def apply(self, points) -> np.ndarray:
        """Transform an ``(N, 3)`` array (or a single 3-vector)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def compose(self, first: RigidTransform):
        """``self ∘ first``: apply ``first``, then ``self``."""
        return type(self).from_matrix(self.matrix() @ first.matrix())

    def allclose(self, other: RigidTransform, atol: float = 1e-9) -> bool:
        return np.allclose(self.matrix(), other.matrix(), rtol=0.0, atol=atol)

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict):
        return cls(np.array(d["rotation"]), np.array(d["translation"]))

    def __repr__(self) -> str:
        return f"{type(self).__name__}(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


class CameraExtrinsics(RigidTransform):
    """World-to-camera rigid transform."""


class RelativePose(RigidTransform):
    """Source-camera to destination-camera rigid transform."""


def relative_pose(src: RigidTransform, dst: RigidTransform) -> RelativePose:
    """``T_dst @ inv(T_src)``, inverted in 4x4 homogeneous form."""
    m = dst.matrix() @ np.linalg.inv(src.matrix())
    return RelativePose.from_matrix(m)


def _rot_y(a: float) -> np.ndarray:
    # Positive yaw swings the optical axis toward -x (camera right, since x points left).
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


def _rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_from_ypr(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Rotation from yaw/pitch/roll in degrees.

    Composition is ``R_z(roll) @ R_x(pitch) @ R_y(yaw)``: yaw about the
    vertical y axis is applied first, then pitch about x, then roll about the
    optical axis. Positive yaw maps the forward axis to
    ``(-sin(yaw), 0, cos(yaw))``, i.e. toward the right in COLMAP axes;
    positive pitch tilts it toward -y (up).
    """
    y, p, r = np.radians([yaw, pitch, roll])
    return _rot_z(r) @ _rot_x(p) @ _rot_y(y)


def _camera_centers(frames) -> np.ndarray:
    rots = np.stack([f.extrinsics.rotation for f in frames])
    ts = np.stack([f.extrinsics.translation for f in frames])
    return -np.einsum("nji,nj->ni", rots, ts)


def max_relative_translation(frames) -> float:
    """Largest ``|t|`` of ``T_j inv(T_i)`` over all frame pairs.

    That norm equals the distance between the two camera centers, so the max
    over ordered pairs is the diameter of the center cloud.
    """
    centers = _camera_centers(frames)
    if len(centers) < 2:
        return 0.0
    return float(pdist(centers).max())


def normalize_scene_scale(scenes: Sequence, eps: float = 1e-8) -> list:
    """Rescale translations so each scene's largest relative translation is 1.

    Works on any object with a ``frames`` sequence whose items carry an
    ``extrinsics`` attribute (dataset manifests in practice). One scalar per
    scene; rotations are untouched. Scenes with fewer than two frames are
    passed through unchanged with a logged warning.
    """
    out = []
    for scene in scenes:
        frames = list(scene.frames)
        if len(frames) < 2:
            logger.warning(
                "scene %s has %d frame(s); scale normalization skipped",
                getattr(scene, "scene_id", "?"),
                len(frames),
            )
            out.append(scene)
            continue
        s = max(max_relative_translation(frames), eps)
        new_frames = [
            dataclasses.replace(
                f,
                extrinsics=type(f.extrinsics)(
                    f.extrinsics.rotation, f.extrinsics.translation / s
                ),
            )
            for f in frames
        ]
        out.append(dataclasses.replace(scene, frames=tuple(new_frames)))
    return out
