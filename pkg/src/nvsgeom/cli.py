"""Command-line entry point.

Exit codes: 0 success, 1 input error, 2 numeric or degenerate failure.
Set ``NVSGEOM_LOG`` (e.g. ``DEBUG``) to change the log level.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .camera import normalize_scene_scale
from .dataset import (
    CameraFileError,
    PairSample,
    count_pairs,
    read_camera_file,
    sample_eval_pair,
    sample_training_pair,
)
from .diffusion import (
    SamplerConfig,
    SamplerDivergenceError,
    constant_denoiser,
    edm_sample,
    gaussian_denoiser,
)
from .encoding import (
    EmbeddingStats,
    fourier_features,
    normalize_depth,
    normalize_embedding,
    pixel_grid,
    pose_embedding,
    warp_coordinates,
)
from .epipolar import (
    DegenerateGeometryError,
    EpipolarMixParams,
    attention_bias,
    epipolar_distance_matrix,
    fundamental_matrix,
    zero_bias,
)
from .homoaug import AugmentationError, make_pair, to_augmentation_size
from .metrics import (
    COVARIANCE_CONVENTION,
    frechet_distance,
    joint_features,
    psnr,
    summarize,
)
from .rng import ALGORITHM, make_rng
from .tensorfile import TensorFileError, read_tensor, write_tensor

logger = logging.getLogger("nvsgeom")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


class InputError(Exception):
    pass


class NumericError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclasses.dataclass
class RunManifest:
    command: str
    argv: list
    seed: int | None
    inputs: dict
    version: str = __version__
    rng: str = ALGORITHM
    timestamp: str = ""
    details: dict = dataclasses.field(default_factory=dict)

    def write(self, out_dir: Path) -> Path:
        self.timestamp = _dt.datetime.now(_dt.timezone.utc).isoformat()
        path = out_dir / f"run_{self.command.replace('-', '_')}.json"
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2) + "\n")
        return path


def _manifest(args, inputs, **details) -> RunManifest:
    hashes = {}
    for p in inputs:
        p = Path(p)
        if p.is_file():
            hashes[str(p)] = _sha256(p)
    return RunManifest(
        command=args.command,
        argv=list(args.argv),
        seed=args.seed,
        inputs=hashes,
        details=details,
    )


def _out_dir(args) -> Path:
    if not args.output:
        raise InputError(f"{args.command} needs --output")
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _read_json(path) -> object:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read {path}: {e}") from None


def _size(text: str) -> tuple[int, int]:
    """Parse ``HxW`` (or a single ``N`` for square)."""
    parts = text.lower().split("x")
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size {text!r}, expected HxW") from None
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2 or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"bad size {text!r}, expected HxW")
    return vals[0], vals[1]


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None


def _load_pairs(path) -> list[PairSample]:
    data = _read_json(path)
    if not isinstance(data, list):
        raise InputError(f"{path}: expected a JSON array of pairs")
    try:
        return [PairSample.from_dict(d) for d in data]
    except (KeyError, TypeError, ValueError) as e:
        raise InputError(f"{path}: malformed pair record: {e}") from None


def _map(fn, items, jobs: int, processes: bool = False):
    if jobs <= 1:
        return [fn(x) for x in items]
    pool = ProcessPoolExecutor if processes else ThreadPoolExecutor
    with pool(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# --------------------------------------------------------------------------
# index


def _index_one(path: str):
    try:
        scene = read_camera_file(path)
    except (CameraFileError, OSError) as e:
        return path, None, str(e)
    entry = {
        "scene_id": scene.scene_id,
        "num_frames": len(scene),
        "timestamp_range": list(scene.timestamp_range),
        "path": path,
    }
    return path, entry, None


def cmd_index(args) -> int:
    root = Path(args.dataset_dir)
    if not root.is_dir():
        raise InputError(f"cannot read dataset directory {root}")
    out = _out_dir(args)
    files = sorted(str(p.resolve()) for p in root.glob("*.txt"))
    results = _map(_index_one, files, args.jobs, processes=True)
    scenes, bad = [], []
    for path, entry, err in results:
        if err is None:
            scenes.append(entry)
        else:
            bad.append({"path": path, "error": err})
            logger.error("%s", err)
    if bad and not args.skip_bad:
        logger.error("%d file(s) failed to parse; rerun with --skip-bad to exclude them", len(bad))
        return EXIT_INPUT
    for b in bad:
        logger.warning("skipping %s", b["path"])
    _write_json(out / "index.json", {"scenes": scenes})
    _manifest(args, files, scenes=len(scenes), skipped=bad).write(out)
    return EXIT_OK


# --------------------------------------------------------------------------
# sample-pairs


def _load_index_scenes(index_path):
    idx = _read_json(index_path)
    try:
        entries = idx["scenes"]
    except (TypeError, KeyError):
        raise InputError(f"{index_path}: not a scene index") from None
    scenes = []
    for e in entries:
        try:
            scenes.append(read_camera_file(e["path"]))
        except (CameraFileError, OSError) as err:
            raise InputError(str(err)) from None
    return scenes


def cmd_sample_pairs(args) -> int:
    out = _out_dir(args)
    label = "training" if args.range == "train" else args.range
    scenes = _load_index_scenes(args.index)
    if args.normalize_scale:
        scenes = normalize_scene_scale(scenes)
    counts = [count_pairs(s, label) for s in scenes]
    usable = [s for s, c in zip(scenes, counts) if c > 0]
    available = sum(counts)
    if not usable:
        raise InputError(f"no scene admits range {args.range!r}")
    with_replacement = args.count > available
    if with_replacement:
        logger.warning(
            "requested %d pairs but only %d distinct ones exist; sampling with replacement",
            args.count,
            available,
        )
    rng = make_rng(args.seed)
    pairs, seen = [], set()
    while len(pairs) < args.count:
        scene = usable[int(rng.integers(len(usable)))]
        if label == "training":
            p = sample_training_pair(scene, rng)
        else:
            p = sample_eval_pair(scene, label, rng)
        key = (p.scene_id, p.src_index, p.dst_index)
        if not with_replacement and key in seen:
            continue
        seen.add(key)
        pairs.append(p)
    _write_json(out / "pairs.json", [p.to_dict() for p in pairs])
    _manifest(
        args,
        [args.index],
        range=label,
        count=args.count,
        distinct_available=available,
        with_replacement=with_replacement,
        normalize_scale=args.normalize_scale,
    ).write(out)
    return EXIT_OK


# --------------------------------------------------------------------------
# epibias


def _mix_params(args) -> EpipolarMixParams:
    if args.params:
        return EpipolarMixParams.from_dict(_read_json(args.params))
    n = args.heads

    def per_head(v):
        v = np.asarray(v, dtype=np.float64)
        if v.size not in (1, n):
            raise InputError(f"mix parameter list must have 1 or {n} values")
        return np.broadcast_to(v, (n,))

    return EpipolarMixParams(per_head(args.m), per_head(args.tau), per_head(args.c), per_head(args.b))


def epibias_for_pair(pair: PairSample, grid_dst, grid_src, image_size, params):
    """Bias tensor ``(heads, N_dst, N_src)`` plus distance matrix (or None) for one pair."""
    h, w = image_size
    k_src = pair.k_src.at_resolution(w, h)
    k_dst = pair.k_dst.at_resolution(w, h)
    n_dst = grid_dst[0] * grid_dst[1]
    n_src = grid_src[0] * grid_src[1]
    try:
        f = fundamental_matrix(k_src, k_dst, pair.relative_pose)
    except DegenerateGeometryError:
        return zero_bias(params.heads, n_dst, n_src), None
    dist = epipolar_distance_matrix(f, grid_dst, grid_src, image_size)
    return attention_bias(dist, params), dist


def cmd_epibias(args) -> int:
    out = _out_dir(args)
    pairs = _load_pairs(args.pairs)
    params = _mix_params(args)
    grid_dst = args.grid
    grid_src = args.src_grid or args.grid
    tdir = out / "epibias"
    tdir.mkdir(exist_ok=True)

    def run(item):
        i, pair = item
        bias, dist = epibias_for_pair(pair, grid_dst, grid_src, args.image_size, params)
        name = f"pair_{i:05d}.nvst"
        write_tensor(tdir / name, bias)
        rec = {
            "file": f"epibias/{name}",
            "scene_id": pair.scene_id,
            "src_index": pair.src_index,
            "dst_index": pair.dst_index,
            "shape": list(bias.shape),
            "degenerate_pose": dist is None,
            "degenerate_rows": 0 if dist is None else int(dist.degenerate_rows.sum()),
        }
        if args.save_distance and dist is not None:
            dname = f"dist_{i:05d}.nvst"
            write_tensor(tdir / dname, dist.values)
            rec["distance_file"] = f"epibias/{dname}"
        if dist is None:
            logger.warning("pair %d is a pure rotation; wrote zero bias", i)
        return rec

    records = _map(run, list(enumerate(pairs)), args.jobs)
    _write_json(out / "epibias.json", {"params": params.to_dict(), "pairs": records})
    _manifest(
        args,
        [args.pairs] + ([args.params] if args.params else []),
        grid_dst=list(grid_dst),
        grid_src=list(grid_src),
        image_size=list(args.image_size),
        degenerate_pairs=sum(r["degenerate_pose"] for r in records),
    ).write(out)
    return EXIT_OK


# --------------------------------------------------------------------------
# pose-embed


def cmd_pose_embed(args) -> int:
    out = _out_dir(args)
    pairs = _load_pairs(args.pairs)
    if not pairs:
        raise InputError("no pairs")
    emb = []
    for p in pairs:
        ks, kd = p.k_src, p.k_dst
        if args.image_size:
            h, w = args.image_size
            ks, kd = ks.at_resolution(w, h), kd.at_resolution(w, h)
        emb.append(pose_embedding(p.relative_pose.inverse(), ks, kd))
    emb = np.stack(emb)
    if args.stats:
        stats = EmbeddingStats.from_dict(_read_json(args.stats))
    else:
        if len(emb) < 2:
            raise InputError("need at least two pairs to estimate statistics")
        stats = EmbeddingStats.from_embeddings(emb)
    write_tensor(out / "embeddings.nvst", emb)
    write_tensor(out / "embeddings_normalized.nvst", normalize_embedding(emb, stats))
    _write_json(out / "stats.json", stats.to_dict())
    _manifest(args, [args.pairs] + ([args.stats] if args.stats else []), n=len(emb)).write(out)
    return EXIT_OK


# --------------------------------------------------------------------------
# depth-warp


def cmd_depth_warp(args) -> int:
    out = _out_dir(args)
    try:
        depth = read_tensor(args.depth).astype(np.float64)
    except (OSError, TensorFileError) as e:
        raise InputError(str(e)) from None
    if depth.ndim != 2:
        raise InputError(f"depth tensor must be 2-D, got shape {depth.shape}")
    pairs = _load_pairs(args.pairs)
    if not 0 <= args.pair_index < len(pairs):
        raise InputError(f"pair index {args.pair_index} out of range")
    pair = pairs[args.pair_index]
    h, w = depth.shape
    out_h, out_w = args.out_size or (h, w)
    k_src = pair.k_src.at_resolution(w, h)
    k_dst = pair.k_dst.at_resolution(out_w, out_h)
    grid = warp_coordinates(depth, k_src, k_dst, pair.relative_pose, (out_h, out_w))
    write_tensor(out / "depth_normalized.nvst", normalize_depth(depth))
    write_tensor(out / "grid_dst.nvst", grid)
    write_tensor(out / "fourier_src.nvst", fourier_features(pixel_grid(h, w), args.channels))
    write_tensor(out / "fourier_dst.nvst", fourier_features(grid, args.channels, size=(h, w)))
    filled = float(np.mean(np.any(grid >= 0, axis=-1)))
    _manifest(args, [args.depth, args.pairs], pair_index=args.pair_index, filled_fraction=filled).write(out)
    return EXIT_OK


# --------------------------------------------------------------------------
# augment


def _load_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def _save_png(path, img) -> None:
    from PIL import Image

    a = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(a).save(path)


def _augment_one(job):
    i, image_path, seed, resolution, out_dir = job
    try:
        img = to_augmentation_size(_load_png(image_path))
        pair = make_pair(img, make_rng(seed, i), resolution)
    except AugmentationError as e:
        return i, None, str(e)
    stem = f"pair_{i:05d}"
    _save_png(Path(out_dir) / f"{stem}_src.png", pair.src_image)
    _save_png(Path(out_dir) / f"{stem}_dst.png", pair.dst_image)
    meta = pair.sidecar()
    meta.update({"index": i, "seed": seed, "image": str(image_path), "resolution": resolution})
    _write_json(Path(out_dir) / f"{stem}.json", meta)
    return i, meta["regime"], None


def cmd_augment(args) -> int:
    out = _out_dir(args)
    root = Path(args.image_dir)
    if not root.is_dir():
        raise InputError(f"cannot read image directory {root}")
    images = sorted(p for p in root.iterdir() if p.suffix.lower() == ".png")
    if not images:
        raise InputError(f"no PNG images in {root}")
    jobs = [(i, str(images[i % len(images)]), args.seed, args.resolution, str(out)) for i in range(args.count)]
    try:
        results = _map(_augment_one, jobs, args.jobs, processes=True)
    except OSError as e:
        raise InputError(str(e)) from None
    failures = [{"index": i, "error": err} for i, _, err in results if err]
    for f in failures:
        logger.warning("pair %d skipped: %s", f["index"], f["error"])
    regimes = [r for _, r, err in results if not err]
    _manifest(
        args,
        images,
        count=args.count,
        resolution=args.resolution,
        succeeded=len(regimes),
        failed=len(failures),
        failures=failures,
        regime_counts={k: regimes.count(k) for k in ("A", "B")},
    ).write(out)
    if not regimes:
        raise NumericError("no augmentation pair succeeded")
    return EXIT_OK


# --------------------------------------------------------------------------
# sample


def cmd_sample(args) -> int:
    out = _out_dir(args)
    mu = np.full(args.dim, args.mu)
    if args.denoiser == "gaussian":
        denoiser = gaussian_denoiser(mu, args.sigma_data)
    else:
        denoiser = constant_denoiser(mu)
    config = SamplerConfig(args.steps, args.sigma_min, args.sigma_max, args.rho)
    noise = make_rng(args.seed).standard_normal((args.count, args.dim)) * config.sigma_max
    try:
        x = edm_sample(denoiser, config, noise)
    except SamplerDivergenceError as e:
        raise NumericError(str(e)) from None
    write_tensor(out / "samples.nvst", x)
    report = {
        "denoiser": args.denoiser,
        "config": dataclasses.asdict(config),
        "n": args.count,
        "dim": args.dim,
        "mean": x.mean(axis=0).tolist(),
        "std": x.std(axis=0, ddof=1).tolist() if args.count > 1 else None,
    }
    _write_json(out / "sample_report.json", report)
    _manifest(args, [], denoiser=args.denoiser).write(out)
    return EXIT_OK


# --------------------------------------------------------------------------
# eval / psnr


def _read_features(path) -> np.ndarray:
    try:
        x = read_tensor(path).astype(np.float64)
    except (OSError, TensorFileError) as e:
        raise InputError(str(e)) from None
    if x.ndim != 2:
        raise InputError(f"{path}: features must be (n, d), got {x.shape}")
    if len(x) < 2:
        raise InputError(f"{path}: need at least two feature vectors")
    return x


def evaluate(features_a, features_b, src_a=None, src_b=None) -> dict:
    if features_a.shape[1] != features_b.shape[1]:
        raise InputError(f"dimension mismatch {features_a.shape[1]} vs {features_b.shape[1]}")
    report = {
        "fd": frechet_distance(summarize(features_a), summarize(features_b)),
        "n_a": int(features_a.shape[0]),
        "n_b": int(features_b.shape[0]),
        "d": int(features_a.shape[1]),
        "covariance": COVARIANCE_CONVENTION,
    }
    if src_a is not None:
        if src_a.shape[1] != src_b.shape[1]:
            raise InputError("source feature dimension mismatch")
        try:
            ja = joint_features(src_a, features_a)
            jb = joint_features(src_b, features_b)
        except ValueError as e:
            raise InputError(str(e)) from None
        report["jfd"] = frechet_distance(summarize(ja), summarize(jb))
        report["d_joint"] = int(ja.shape[1])
    return report


def cmd_eval(args) -> int:
    out = _out_dir(args)
    fa = _read_features(args.features_a)
    fb = _read_features(args.features_b)
    inputs = [args.features_a, args.features_b]
    sa = sb = None
    if args.paired:
        if not (args.src_a and args.src_b):
            raise InputError("--paired needs --src-a and --src-b")
        sa, sb = _read_features(args.src_a), _read_features(args.src_b)
        inputs += [args.src_a, args.src_b]
    report = evaluate(fa, fb, sa, sb)
    _write_json(out / "eval_report.json", report)
    _manifest(args, inputs, paired=bool(args.paired)).write(out)
    print(json.dumps(report))
    return EXIT_OK


def _read_image(path) -> np.ndarray:
    p = Path(path)
    try:
        if p.suffix.lower() == ".png":
            return _load_png(p)
        return read_tensor(p).astype(np.float64)
    except (OSError, TensorFileError) as e:
        raise InputError(str(e)) from None


def cmd_psnr(args) -> int:
    a, b = _read_image(args.image_a), _read_image(args.image_b)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch {a.shape} vs {b.shape}")
    value = psnr(a, b)
    report = {"psnr_db": value if np.isfinite(value) else "inf"}
    if args.output:
        out = _out_dir(args)
        _write_json(out / "psnr.json", report)
        _manifest(args, [args.image_a, args.image_b]).write(out)
    print(json.dumps(report))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers")
    common.add_argument("--output", "-o", help="output directory")

    parser = argparse.ArgumentParser(prog="nvsgeom", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", parents=[common], help="index a directory of camera files")
    p.add_argument("dataset_dir")
    p.add_argument("--skip-bad", action="store_true", help="exclude unparsable files instead of failing")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("sample-pairs", parents=[common], help="sample source/destination pairs")
    p.add_argument("index", help="index.json written by `index`")
    p.add_argument("--range", choices=["train", "mid", "long"], default="train")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--normalize-scale", action="store_true", help="rescale scene translations first")
    p.set_defaults(func=cmd_sample_pairs)

    p = sub.add_parser("epibias", parents=[common], help="epipolar attention bias per pair")
    p.add_argument("pairs", help="pairs.json")
    p.add_argument("--grid", type=_size, default=(8, 8), help="destination token grid HxW")
    p.add_argument("--src-grid", type=_size, help="source token grid (default: same as --grid)")
    p.add_argument("--image-size", type=_size, default=(64, 64), help="image HxW in pixels")
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--m", type=_floats, default=[0.0])
    p.add_argument("--tau", type=_floats, default=[1.0])
    p.add_argument("--c", type=_floats, default=[1.0])
    p.add_argument("--b", type=_floats, default=[0.0])
    p.add_argument("--params", help="JSON file with per-head m, tau, c, b (overrides flags)")
    p.add_argument("--save-distance", action="store_true")
    p.set_defaults(func=cmd_epibias)

    p = sub.add_parser("pose-embed", parents=[common], help="20-element pose embeddings")
    p.add_argument("pairs")
    p.add_argument("--stats", help="precomputed stats.json (default: estimate from the pairs)")
    p.add_argument("--image-size", type=_size, help="denormalize intrinsics to HxW pixels")
    p.set_defaults(func=cmd_pose_embed)

    p = sub.add_parser("depth-warp", parents=[common], help="warped coordinate grid and Fourier features")
    p.add_argument("--depth", required=True, help="source depth tensor (H, W)")
    p.add_argument("--pairs", required=True)
    p.add_argument("--pair-index", type=int, default=0)
    p.add_argument("--out-size", type=_size)
    p.add_argument("--channels", type=int, default=128)
    p.set_defaults(func=cmd_depth_warp)

    p = sub.add_parser("augment", parents=[common], help="homography view pairs from single images")
    p.add_argument("image_dir")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--resolution", type=int, default=64)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("sample", parents=[common], help="run the ODE sampler with a built-in denoiser")
    p.add_argument("--denoiser", choices=["gaussian", "constant"], default="gaussian")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--sigma-data", type=float, default=0.5)
    p.add_argument("--steps", type=int, default=32)
    p.add_argument("--sigma-min", type=float, default=0.002)
    p.add_argument("--sigma-max", type=float, default=80.0)
    p.add_argument("--rho", type=float, default=7.0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", parents=[common], help="Fréchet distance between feature tensors")
    p.add_argument("features_a")
    p.add_argument("features_b")
    p.add_argument("--paired", action="store_true", help="also report the joint distance")
    p.add_argument("--src-a", help="source-view features aligned with features_a")
    p.add_argument("--src-b", help="source-view features aligned with features_b")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("psnr", parents=[common], help="PSNR between two images (PNG or tensor)")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.set_defaults(func=cmd_psnr)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("NVSGEOM_LOG", "WARNING").upper()
    logging.basicConfig(
        level=level if isinstance(logging.getLevelName(level), int) else "WARNING",
        format="%(levelname)s %(name)s: %(message)s",
    )
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    try:
        return args.func(args)
    except (InputError, CameraFileError, TensorFileError) as e:
        logger.error("%s", e)
        return EXIT_INPUT
    except (NumericError, SamplerDivergenceError, DegenerateGeometryError, AugmentationError) as e:
        logger.error("%s", e)
        return EXIT_NUMERIC
    except ValueError as e:
        logger.error("%s", e)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
