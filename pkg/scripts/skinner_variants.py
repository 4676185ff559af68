"""Held-out posed P2P of skinner variants (pose encoding width, BatchNorm) against zero offsets.

    python3 scripts/skinner_variants.py DATA_DIR [--epochs 200]
"""

import argparse
import json

from bodykit.ablation import skinner_ablation
from bodykit.procgen import Dataset
from bodykit.skinner import SkinnerConfig

VARIANTS = [
    {"fourier_f": 0, "bn": True},
    {"fourier_f": 0, "bn": False},
    {"fourier_f": 16, "bn": True},
    {"fourier_f": 16, "bn": False},
]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("data")
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    ds = Dataset(args.data)
    base = SkinnerConfig(epochs=args.epochs, seed=args.seed)
    for row in skinner_ablation(ds, base, VARIANTS):
        print(json.dumps(row), flush=True)


if __name__ == "__main__":
    main()
