#!/usr/bin/env python3
"""Generate a small synthetic rock corpus ready for training.

Writes PNG sources plus the prepared HR/LR pairs and manifest under
--out, same layout as `rocksr prepare` on real data.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from rocksr.synthetic import make_toy_corpus


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--n-images", type=int, default=24)
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--scale", type=int, default=4, choices=(2, 4))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    manifest = make_toy_corpus(args.out, args.n_images, args.size,
                               args.scale, args.seed)
    by_split = {}
    for e in manifest.entries:
        by_split[e.split] = by_split.get(e.split, 0) + 1
    print(f"wrote {len(manifest.entries)} images to {args.out}")
    for split in ("train", "valid", "test"):
        print(f"  {split}: {by_split.get(split, 0)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
