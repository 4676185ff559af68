"""Held-out generator P2P for f=0 and f=8 over a few Fourier bandwidths.

    python3 scripts/sigma_sweep.py DATA_DIR [--sigmas 1 0.5 0.25] [--epochs 200]
"""

import argparse
import json

from bodykit.generator import GeneratorConfig, heldout_p2p, train_generator
from bodykit.procgen import Dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("data")
    ap.add_argument("--sigmas", type=float, nargs="+", default=[1.0, 0.5, 0.25])
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    ds = Dataset(args.data)
    test = ds.split("test")
    runs = [(0, 1.0)] + [(8, s) for s in args.sigmas]
    for f, sigma in runs:
        gen = train_generator(ds, GeneratorConfig(fourier_f=f, sigma=sigma, epochs=args.epochs, seed=args.seed))
        print(json.dumps({"fourier_f": f, "sigma": sigma, "heldout_p2p_mm": 1000 * heldout_p2p(gen, ds, test)}),
              flush=True)


if __name__ == "__main__":
    main()
