"""Command line surface: prepare, train, infer, eval, diffmap.

Exit codes are a stable contract for wrapping scripts:
0 success, 1 usage error, 2 data error, 3 numerical abort.
Every run writes a JSON echo of its effective configuration (sorted
keys) so results can be reproduced from the artifact directory alone.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import CheckpointError, load_feature_network, load_generator
from .dataset import AugmentSpec, load_manifest, prepare_corpus
from .errors import DataError, TrainingDiverged
from .images import GrayImage, difference_map, load_image, save_image
from .losses import LossWeights, psnr
from .models import (
    Discriminator,
    DiscriminatorConfig,
    FeatureConfig,
    FeatureNetwork,
    Generator,
    GeneratorConfig,
    super_resolve,
)
from .resample import upsample_bicubic
from .trainer import TrainSchedule, train, validate

IMAGE_SUFFIXES = (".png", ".pgm")
TILE_OVERLAP = 16  # LR pixels shared between adjacent tiles


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the contract says 1
        raise UsageError(f"{self.prog}: {message}")


def _echo_config(path: Path, command: str, values: dict) -> None:
    payload = {"command": command}
    for key, value in values.items():
        payload[key] = str(value) if isinstance(value, Path) else value
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- prepare -----------------------------------------------------------------


def cmd_prepare(args) -> int:
    hr_dir = Path(args.hr_dir)
    if not hr_dir.is_dir():
        raise DataError(f"{hr_dir} is not a directory")
    paths = sorted(p for p in hr_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise DataError(f"no {'/'.join(IMAGE_SUFFIXES)} images in {hr_dir}")
    out = Path(args.out)
    manifest, warnings = prepare_corpus(paths, out, scale=args.scale,
                                        seed=args.seed, kernel_mode=args.kernels)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    _echo_config(out / "run_config.json", "prepare", {
        "hr_dir": hr_dir, "out": out, "scale": args.scale,
        "kernels": args.kernels, "seed": args.seed,
    })
    counts = {s: len(manifest.for_split(s)) for s in ("train", "valid", "test")}
    print(f"prepared {len(manifest.entries)} images "
          f"(train={counts['train']} valid={counts['valid']} test={counts['test']}) "
          f"-> {out / 'manifest.jsonl'}")
    return 0


# -- train -------------------------------------------------------------------


def cmd_train(args) -> int:
    manifest = load_manifest(Path(args.manifest))
    out = Path(args.out)

    if args.srcnn_only:
        weights = LossWeights(alpha=0.0, beta=0.0)
    else:
        weights = LossWeights(alpha=args.alpha, beta=args.beta)
    augment = AugmentSpec(blur_sigma_max=args.blur_max,
                          noise_variance_max=args.noise_max) if args.augment else None
    schedule = TrainSchedule(
        srcnn_epochs=args.srcnn_epochs,
        gan_epochs=args.gan_epochs,
        iterations_per_epoch=args.iters,
        batch_size=args.batch_size,
        hr_crop=args.crop,
        lr_generator=args.lr_g,
        lr_discriminator=args.lr_d,
        loss_weights=weights,
        seed=args.seed,
        augment=augment,
        validate_split=args.validate_split,
        prefetch_depth=args.prefetch,
    )
    schedule.validate()

    generator = Generator(
        GeneratorConfig(n_residual_blocks=args.blocks, n_filters=args.filters,
                        scale=manifest.scale),
        seed=args.seed)
    discriminator = None
    if schedule.gan_epochs > 0 and weights.beta > 0:
        discriminator = Discriminator(
            DiscriminatorConfig(input_size=args.crop, base_filters=args.disc_filters,
                                dense_units=args.disc_dense),
            seed=args.seed + 1)
    feature_net = None
    if schedule.gan_epochs > 0 and weights.alpha > 0:
        if args.feature_weights:
            feature_net = load_feature_network(args.feature_weights)
        else:
            feature_net = FeatureNetwork(FeatureConfig(), seed=args.seed + 2)
            print("warning: no --feature-weights given; using a seeded random "
                  "feature network", file=sys.stderr)

    _echo_config(out / "run_config.json", "train", {
        "manifest": args.manifest, "out": out,
        "schedule": asdict(schedule),
        "generator": asdict(generator.config),
        "discriminator": asdict(discriminator.config) if discriminator else None,
        "feature_weights": args.feature_weights,
        "resume": args.resume or bool(args.from_checkpoint),
    })
    result = train(
        schedule, manifest, generator, out,
        discriminator=discriminator, feature_net=feature_net,
        resume=args.resume or bool(args.from_checkpoint),
        resume_from=args.from_checkpoint,
        stop_after_epochs=args.stop_after,
    )
    best = result.summary["best_val_psnr"]
    best_txt = f"{best:.3f} dB" if best is not None else "n/a (no validation split)"
    print(f"trained {result.summary['epochs_completed']} epochs; "
          f"best validation PSNR {best_txt}; artifacts in {out}")
    return 0


# -- infer -------------------------------------------------------------------


def estimate_inference_bytes(h: int, w: int, config: GeneratorConfig) -> int:
    """Rough peak allocation for one forward pass, dominated by the convs
    at upsampled resolutions (padded input + accumulator + tap buffer)."""
    f, s = config.n_filters, config.scale
    peak = 0
    r = 1
    while r < s:  # conv F -> 4F at r*r times the input resolution
        peak = max(peak, r * r * 6 * f)
        r *= 2
    peak = max(peak, s * s * 2 * f + s * s)  # output conv at full resolution
    peak += s * s * f  # the held activation feeding that conv
    return 4 * h * w * peak


def _tile_starts(length: int, tile: int, overlap: int):
    if length <= tile:
        return [0]
    step = tile - overlap
    starts = list(range(0, length - tile, step))
    starts.append(length - tile)
    return starts


def _ramp_weights(n: int, overlap_px: int, at_start_edge: bool, at_end_edge: bool):
    w = np.ones(n, dtype=np.float64)
    k = min(overlap_px, n)
    ramp = (np.arange(1, k + 1)) / (k + 1)
    if not at_start_edge:
        w[:k] = ramp
    if not at_end_edge:
        w[-k:] = np.minimum(w[-k:], ramp[::-1])
    return w


def tiled_super_resolve(generator: Generator, pixels: np.ndarray, tile: int,
                        overlap: int = TILE_OVERLAP) -> np.ndarray:
    """Run overlapping tiles through the generator and blend linearly.

    Tile edges lose context to padding, so overlapping regions are
    cross-faded; weights fall to zero exactly at interior tile borders
    where the artifacts are worst.  Not bit-identical to whole-image
    inference, but artifact-free when overlap covers the receptive field.
    """
    if tile <= overlap:
        raise DataError(f"tile size {tile} must exceed the overlap ({overlap})")
    h, w = pixels.shape
    s = generator.config.scale
    acc = np.zeros((h * s, w * s), dtype=np.float64)
    wsum = np.zeros_like(acc)
    for y0 in _tile_starts(h, tile, overlap):
        th = min(tile, h)
        wy = _ramp_weights(th * s, overlap * s, y0 == 0, y0 + th == h)
        for x0 in _tile_starts(w, tile, overlap):
            tw = min(tile, w)
            sr = super_resolve(generator, pixels[y0:y0 + th, x0:x0 + tw])
            wx = _ramp_weights(tw * s, overlap * s, x0 == 0, x0 + tw == w)
            weight = np.outer(wy, wx)
            acc[y0 * s:(y0 + th) * s, x0 * s:(x0 + tw) * s] += sr * weight
            wsum[y0 * s:(y0 + th) * s, x0 * s:(x0 + tw) * s] += weight
    return (acc / wsum).astype(np.float32)


def _infer_one(generator, src: Path, out_dir: Path, args) -> str:
    img = load_image(src)
    h, w = img.pixels.shape
    s = generator.config.scale
    if args.tile is None:
        need = estimate_inference_bytes(h, w, generator.config)
        budget = args.mem_budget_mb * (1 << 20)
        if need > budget:
            raise DataError(
                f"{src.name}: {h}x{w} needs ~{need >> 20} MB, over the "
                f"{args.mem_budget_mb} MB budget; raise --mem-budget-mb or use --tile")
        sr = super_resolve(generator, img.pixels)
    else:
        sr = tiled_super_resolve(generator, img.pixels, args.tile)
    if sr.shape != (h * s, w * s):
        raise RuntimeError(f"{src.name}: output {sr.shape} is not "
                           f"{s}x the input {(h, w)}")
    out_img = GrayImage(np.clip(sr, -1.0, 1.0), source_bit_depth=img.source_bit_depth,
                        resolution_um=None if img.resolution_um is None
                        else img.resolution_um / s)
    dest = out_dir / src.name
    save_image(out_img, dest)
    return f"{src.name}: {h}x{w} -> {sr.shape[0]}x{sr.shape[1]}"


def cmd_infer(args) -> int:
    generator = load_generator(args.checkpoint)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    sources = [Path(p) for p in args.inputs]
    _echo_config(out_dir / "run_config.json", "infer", {
        "checkpoint": args.checkpoint, "out": out_dir,
        "inputs": [str(p) for p in sources], "tile": args.tile,
        "mem_budget_mb": args.mem_budget_mb, "parallel": args.parallel,
    })
    if args.parallel > 1:
        with ThreadPoolExecutor(max_workers=args.parallel) as pool:
            lines = list(pool.map(lambda p: _infer_one(generator, p, out_dir, args),
                                  sources))
    else:
        lines = [_infer_one(generator, p, out_dir, args) for p in sources]
    for line in lines:
        print(line)
    return 0


# -- eval --------------------------------------------------------------------


def _eval_entry(manifest, entry, generators):
    try:
        lr = load_image(manifest.lr_file(entry))
        hr = load_image(manifest.hr_file(entry))
    except DataError as exc:
        return entry, None, str(exc)
    scale = manifest.scale
    base = np.clip(upsample_bicubic(lr.pixels, scale), -1.0, 1.0)
    scores = [("bicubic", psnr(base, hr.pixels))]
    for method, gen in generators:
        sr = np.clip(super_resolve(gen, lr.pixels), -1.0, 1.0)
        scores.append((method, psnr(sr, hr.pixels)))
    return entry, scores, None


def cmd_eval(args) -> int:
    manifest = load_manifest(Path(args.manifest))
    entries = manifest.for_split(args.split)
    if not entries:
        raise DataError(f"split '{args.split}' has no entries")
    generators = [("sr", load_generator(args.checkpoint))]
    if args.checkpoint2:
        generators.append(("sr2", load_generator(args.checkpoint2)))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(out_dir / "run_config.json", "eval", {
        "manifest": args.manifest, "split": args.split, "out": out_dir,
        "checkpoint": args.checkpoint, "checkpoint2": args.checkpoint2,
        "parallel": args.parallel,
    })

    if args.parallel > 1:
        with ThreadPoolExecutor(max_workers=args.parallel) as pool:
            results = list(pool.map(lambda e: _eval_entry(manifest, e, generators),
                                    entries))
    else:
        results = [_eval_entry(manifest, e, generators) for e in entries]

    rows = []
    for entry, scores, failure in results:
        if failure is not None:
            print(f"warning: skipping {entry.id}: {failure}", file=sys.stderr)
            continue
        for method, value in scores:
            rows.append({"id": entry.id, "class": entry.rock_class,
                         "method": method, "psnr": value})
    if not rows:
        raise DataError("every entry in the split failed to load")

    with open(out_dir / "per_image.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["id", "class", "method", "psnr"])
        writer.writeheader()
        writer.writerows(rows)

    methods = ["bicubic"] + [m for m, _ in generators]
    classes = sorted({r["class"] for r in rows})
    stats = []
    for cls in classes + ["all"]:
        for method in methods:
            values = [r["psnr"] for r in rows
                      if r["method"] == method and (cls == "all" or r["class"] == cls)]
            if not values:
                print(f"warning: no images for class '{cls}'", file=sys.stderr)
                continue
            arr = np.array(values)
            stats.append({"class": cls, "method": method,
                          "mean": float(arr.mean()), "var": float(arr.var(ddof=0))})
    with open(out_dir / "stats.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["class", "method", "mean", "var"])
        writer.writeheader()
        writer.writerows(stats)
    for s in stats:
        print(f"{s['class']:<12} {s['method']:<8} mean={s['mean']:.4f} var={s['var']:.4f}")
    return 0


# -- diffmap -----------------------------------------------------------------


def cmd_diffmap(args) -> int:
    a = load_image(Path(args.image_a))
    b = load_image(Path(args.image_b))
    if a.pixels.shape != b.pixels.shape:
        raise DataError(
            f"image sizes differ: {a.pixels.shape} vs {b.pixels.shape}")
    if args.display_scale is not None:
        scale = args.display_scale
        if scale <= 0:
            raise DataError(f"display scale must be positive, got {scale}")
    else:
        peak = float(np.abs(a.pixels.astype(np.float64)
                            - b.pixels.astype(np.float64)).max())
        scale = 2.0 / peak if peak > 0 else 1.0
    dm = difference_map(a, b, display_scale=scale)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(dm.quantized()).save(out)
    _echo_config(Path(str(out) + ".config.json"), "diffmap", {
        "image_a": args.image_a, "image_b": args.image_b, "out": out,
        "display_scale": scale,
    })
    # a pixel at 255 in the map corresponds to this absolute difference:
    print(f"mean_abs_diff={dm.mean:.6g} display_saturation={2.0 / scale:.6g}")
    return 0


# -- wiring ------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="rocksr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="build an HR/LR training corpus")
    p.add_argument("--hr-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=int, choices=(2, 4), default=4)
    p.add_argument("--kernels", choices=("random", "bicubic"), default="random")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="run the two-phase training schedule")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--srcnn-epochs", type=int, default=100)
    p.add_argument("--gan-epochs", type=int, default=150)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--crop", type=int, default=192)
    p.add_argument("--lr-g", type=float, default=1e-4)
    p.add_argument("--lr-d", type=float, default=1e-4)
    p.add_argument("--alpha", type=float, default=1e-5)
    p.add_argument("--beta", type=float, default=5e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--blocks", type=int, default=16)
    p.add_argument("--filters", type=int, default=64)
    p.add_argument("--disc-filters", type=int, default=64)
    p.add_argument("--disc-dense", type=int, default=1024)
    p.add_argument("--feature-weights", default=None)
    p.add_argument("--srcnn-only", action="store_true",
                   help="pixel loss only: zero feature and adversarial weights")
    p.add_argument("--augment", action="store_true")
    p.add_argument("--blur-max", type=float, default=1.0)
    p.add_argument("--noise-max", type=float, default=0.005)
    p.add_argument("--prefetch", type=int, default=4)
    p.add_argument("--validate-split", default="valid")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--from-checkpoint", default=None,
                   help="state file to resume from (implies --resume)")
    p.add_argument("--stop-after", type=int, default=None,
                   help="run at most this many epochs in this invocation")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="super-resolve images with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tile", type=int, default=None,
                   help="process in NxN input tiles, blended over a "
                        f"{TILE_OVERLAP}px overlap")
    p.add_argument("--mem-budget-mb", type=int, default=2048)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="PSNR statistics against a manifest split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--checkpoint2", default=None,
                   help="second checkpoint scored alongside, as method 'sr2'")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--parallel", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diffmap", help="8-bit absolute difference image")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("--out", required=True)
    p.add_argument("--display-scale", type=float, default=None,
                   help="difference-to-display gain (default: saturate at "
                        "the largest observed difference)")
    p.set_defaults(func=cmd_diffmap)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        if exc.last_checkpoint is not None:
            print(f"last good state: {exc.last_checkpoint}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
