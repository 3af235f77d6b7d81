"""Synthetic cameras, scenes and images shared by the test modules."""

from __future__ import annotations

from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from nvsgeom.camera import CameraExtrinsics, CameraIntrinsics, RelativePose
from nvsgeom.dataset import FrameRecord, SceneManifest, serialize_camera_file
from nvsgeom.rng import make_rng

FIXTURE_LENGTHS = (20, 61, 90, 121, 150)


def random_rotation(rng) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()


def random_extrinsics(rng, scale: float = 1.0) -> CameraExtrinsics:
    return CameraExtrinsics(random_rotation(rng), rng.normal(size=3) * scale)


def random_pose(rng, min_translation: float = 0.1) -> RelativePose:
    t = rng.normal(size=3)
    t *= max(np.linalg.norm(t), min_translation) / np.linalg.norm(t)
    return RelativePose(random_rotation(rng), t)


def random_forward_pose(rng, max_angle: float = 30.0) -> RelativePose:
    """A translated camera that still faces roughly the same way, so the two views overlap."""
    from nvsgeom.camera import rotation_from_ypr

    r = rotation_from_ypr(*rng.uniform(-max_angle, max_angle, size=3))
    t = rng.normal(size=3)
    t *= rng.uniform(0.1, 2.0) / np.linalg.norm(t)
    return RelativePose(r, t)


def project(k, pts):
    p = pts @ k.matrix().T
    return p[:, :2] / p[:, 2:]


def correspondences(rng, k_src, k_dst, pose, n=200):
    """Points in front of both cameras, as homogeneous pixel pairs."""
    out_s, out_d = [], []
    for _ in range(100):
        if sum(len(a) for a in out_s) >= n:
            break
        pix = rng.uniform([0, 0], [k_src.width, k_src.height], size=(4 * n, 2))
        z = rng.uniform(1.0, 20.0, size=(4 * n, 1))
        rays = np.c_[pix, np.ones(4 * n)] @ np.linalg.inv(k_src.matrix()).T
        pts = rays * z
        dst = pose.apply(pts)
        ok = dst[:, 2] > 0.1
        out_s.append(pix[ok])
        out_d.append(project(k_dst, dst[ok]))
    xs = np.concatenate(out_s)[:n]
    xd = np.concatenate(out_d)[:n]
    return np.c_[xs, np.ones(n)], np.c_[xd, np.ones(n)]


def double_loop(f, grid_dst, grid_src, size):
    h, w = size
    out = np.zeros((grid_dst[0] * grid_dst[1], grid_src[0] * grid_src[1]))
    for di in range(grid_dst[0]):
        for dj in range(grid_dst[1]):
            xd = np.array([(dj + 0.5) * w / grid_dst[1], (di + 0.5) * h / grid_dst[0], 1.0])
            a, b, c = f.T @ xd
            for si in range(grid_src[0]):
                for sj in range(grid_src[1]):
                    x = (sj + 0.5) * w / grid_src[1]
                    y = (si + 0.5) * h / grid_src[0]
                    out[di * grid_dst[1] + dj, si * grid_src[1] + sj] = abs(a * x + b * y + c) / np.sqrt(a * a + b * b)
    return out


def random_intrinsics(rng, width: int = 64, height: int = 64) -> CameraIntrinsics:
    return CameraIntrinsics(
        fx=rng.uniform(0.6, 1.8) * width,
        fy=rng.uniform(0.6, 1.8) * height,
        cx=rng.uniform(0.3, 0.7) * width,
        cy=rng.uniform(0.3, 0.7) * height,
        width=width,
        height=height,
    )


def synthetic_scene(num_frames: int, scene_id: str = "scene", seed: int = 0) -> SceneManifest:
    """A camera dollying along a wobbly path, with slowly varying normalized intrinsics."""
    rng = make_rng(seed, num_frames)
    frames = []
    ts = 1_000_000 + int(rng.integers(1000))
    yaw = 0.0
    center = np.zeros(3)
    for i in range(num_frames):
        yaw += rng.normal(scale=0.5)
        r = Rotation.from_euler("yxz", [yaw, rng.normal(scale=1.0), rng.normal(scale=0.5)], degrees=True).as_matrix()
        center = center + np.array([0.02, 0.0, 0.05]) + rng.normal(scale=0.01, size=3)
        k = CameraIntrinsics(
            0.9 + 0.01 * rng.normal(),
            1.6 + 0.01 * rng.normal(),
            0.5 + 0.005 * rng.normal(),
            0.5 + 0.005 * rng.normal(),
            1.0,
            1.0,
        )
        frames.append(FrameRecord(ts, k, CameraExtrinsics(r, -r @ center), i))
        ts += 33_366 + int(rng.integers(-5, 6))
    return SceneManifest(scene_id, tuple(frames), f"https://example.org/watch?v={scene_id}")


def write_dataset(root: Path, lengths=FIXTURE_LENGTHS, seed: int = 0) -> list[Path]:
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, n in enumerate(lengths):
        scene = synthetic_scene(n, f"scene{i:02d}", seed + i)
        p = root / f"{scene.scene_id}.txt"
        p.write_text(serialize_camera_file(scene))
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# natural test images


def _photo_sources() -> dict[str, np.ndarray]:
    import skimage.data as data

    left, right, _ = data.stereo_motorcycle()
    photos = {
        "astronaut": data.astronaut(),
        "camera": data.camera(),
        "chelsea": data.chelsea(),
        "coffee": data.coffee(),
        "coins": data.coins(),
        "hubble": data.hubble_deep_field(),
        "ihc": data.immunohistochemistry(),
        "moon": data.moon(),
        "motorcycle_left": left,
        "motorcycle_right": right,
        "retina": data.retina(),
        "rocket": data.rocket(),
    }
    out = {}
    for name, a in photos.items():
        a = np.asarray(a, dtype=np.float64) / 255.0
        if a.ndim == 2:
            a = np.repeat(a[..., None], 3, axis=2)
        out[name] = a
    return out


@lru_cache(maxsize=2)
def natural_images(n: int = 100, seed: int = 7) -> tuple[tuple[str, np.ndarray], ...]:
    """``n`` 512x512 photo crops: random square windows (75-100 % of the short
    side, random position and mirror) of the scikit-image photographs, brought
    to 512x512 through the library's own pre-resize."""
    from nvsgeom.homoaug import to_augmentation_size

    sources = _photo_sources()
    names = sorted(sources)
    out = []
    for i in range(n):
        rng = make_rng(seed, i)
        name = names[i % len(names)]
        a = sources[name]
        h, w = a.shape[:2]
        s = int(round(min(h, w) * rng.uniform(0.75, 1.0)))
        y0 = int(rng.integers(h - s + 1))
        x0 = int(rng.integers(w - s + 1))
        crop = a[y0 : y0 + s, x0 : x0 + s]
        if rng.random() < 0.5:
            crop = crop[:, ::-1]
        out.append((name, to_augmentation_size(crop)))
    return tuple(out)


def smooth_image(size: int = 512, seed: int = 0, sigma: float = 8.0) -> np.ndarray:
    from scipy import ndimage

    rng = make_rng(seed)
    noise = rng.random((size, size, 3))
    img = ndimage.gaussian_filter(noise, sigma=(sigma, sigma, 0), mode="wrap")
    img = (img - img.min()) / (img.max() - img.min())
    return img


def masked_psnr(a, b, mask) -> float:
    a = np.asarray(a)[mask]
    b = np.asarray(b)[mask]
    return float(10.0 * np.log10(1.0 / np.mean((a - b) ** 2)))


def round_trip(img, h, order: int | None = None):
    """Warp by ``h`` then ``h^-1``; returns the result and its interior mask.

    Interior pixels are valid after both warps and pull back into the part of
    the intermediate image whose spline footprint (3 px) is itself valid, so
    zero fill never leaks into the comparison.
    """
    from scipy import ndimage

    from nvsgeom.homoaug import warp_image

    kw = {} if order is None else {"order": order}
    size = np.shape(img)[:2]
    hinv = np.linalg.inv(h)
    fwd, m1 = warp_image(img, h, size, **kw)
    back, m2 = warp_image(fwd, hinv, size, **kw)
    core = ndimage.binary_erosion(m1, iterations=3).astype(np.float64)
    pulled, _ = warp_image(core, hinv, size, order=1)
    return back, m2 & (pulled[..., 0] > 1.0 - 1e-9)


# ---------------------------------------------------------------------------
# command-line pipeline


VOLATILE_MANIFEST_KEYS = ("timestamp", "argv")


def run_cli(*argv) -> int:
    from nvsgeom.cli import main

    return main([str(a) for a in argv])


def run_pipeline(dataset_dir: Path, work: Path, seed: int = 0, jobs: int = 1) -> Path:
    """index -> sample-pairs (mid, long) -> epibias -> pose-embed -> eval, all under ``work``."""
    import json

    def ok(*argv):
        code = run_cli(*argv)
        if code != 0:
            raise AssertionError(f"{argv[0]} exited with {code}")

    ok("index", dataset_dir, "-o", work / "index", "--jobs", jobs)
    for rng_label in ("mid", "long"):
        ok(
            "sample-pairs", work / "index" / "index.json", "--range", rng_label,
            "--count", 20, "--seed", seed, "-o", work / f"pairs_{rng_label}",
        )
        pairs = work / f"pairs_{rng_label}" / "pairs.json"
        ok(
            "epibias", pairs, "--grid", "8x8", "--image-size", "64x64", "--heads", 2,
            "--m", "1.5,-0.5", "--tau", "2.0", "--c", "3.0", "--b", "0.1",
            "--jobs", jobs, "-o", work / f"epibias_{rng_label}",
        )
        ok("pose-embed", pairs, "-o", work / f"embed_{rng_label}")
    # Pose embeddings of the two ranges stand in for feature sets.
    emb = {k: work / f"embed_{k}" / "embeddings.nvst" for k in ("mid", "long")}
    ok("eval", emb["mid"], emb["long"], "-o", work / "eval")
    json.loads((work / "eval" / "eval_report.json").read_text())
    return work


def tree_digest(root: Path) -> dict:
    """Relative path -> bytes for every file, with volatile manifest fields dropped."""
    import json

    out = {}
    for p in sorted(root.rglob("*")):
        if not p.is_file():
            continue
        data = p.read_bytes()
        if p.name.startswith("run_") and p.suffix == ".json":
            d = json.loads(data)
            for k in VOLATILE_MANIFEST_KEYS:
                d.pop(k, None)
            # Input hashes are keyed by absolute path; keep only the digests.
            d["inputs"] = sorted(d["inputs"].values())
            data = json.dumps(d, sort_keys=True).encode()
        out[str(p.relative_to(root))] = data
    return out
