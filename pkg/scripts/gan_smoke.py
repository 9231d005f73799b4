#!/usr/bin/env python3
"""Short two-phase run with discriminator and feature network engaged.

Not a convergence demo: the point is to watch both adversaries produce
finite, sane numbers (probabilities drifting off 0.5, losses bounded)
on hardware where a full schedule would take days.
"""

import argparse
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from rocksr.losses import LossWeights
from rocksr.models import (Discriminator, DiscriminatorConfig, FeatureConfig,
                           FeatureNetwork, Generator, GeneratorConfig)
from rocksr.synthetic import make_toy_corpus
from rocksr.trainer import TrainSchedule, train


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=None, help="run directory (default: temp)")
    ap.add_argument("--srcnn-epochs", type=int, default=1)
    ap.add_argument("--gan-epochs", type=int, default=1)
    ap.add_argument("--iters", type=int, default=60)
    ap.add_argument("--crop", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    work = Path(args.out) if args.out else Path(tempfile.mkdtemp(prefix="gansmoke_"))
    manifest = make_toy_corpus(work / "data", 12, 96, 4, args.seed)
    generator = Generator(
        GeneratorConfig(n_residual_blocks=2, n_filters=8, scale=4), seed=args.seed)
    discriminator = Discriminator(
        DiscriminatorConfig(input_size=args.crop, base_filters=4, dense_units=16),
        seed=args.seed + 1)
    feature_net = FeatureNetwork(
        FeatureConfig(block_convs=(1, 1, 1, 1, 1), block_filters=(8, 8, 8, 8, 8)),
        seed=args.seed + 2)
    schedule = TrainSchedule(
        srcnn_epochs=args.srcnn_epochs, gan_epochs=args.gan_epochs,
        iterations_per_epoch=args.iters, batch_size=4, hr_crop=args.crop,
        loss_weights=LossWeights(),  # default alpha/beta
        seed=args.seed, validate_split="valid",
        moving_average_window=20, prefetch_depth=0,
    )
    result = train(schedule, manifest, generator, work / "run",
                   discriminator=discriminator, feature_net=feature_net)

    steps = result.log.column("step")
    tail = slice(max(0, len(steps) - 5), None)
    for key in ("g_total", "d_loss", "p_hr_mean", "p_sr_mean"):
        vals = result.log.column(key)[tail]
        shown = " ".join("-" if v != v else f"{v:.4f}" for v in vals)
        print(f"{key:<10} last 5: {shown}")
    best = result.summary["best_val_psnr"]
    print(f"summary: {result.summary['epochs_completed']} epochs, "
          f"best val {'-' if best is None else f'{best:.3f} dB'}")
    print(f"artifacts in {work}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
