"""Mean-mesh baseline for generator P2P.

Reads records.bin straight from the dataset manifest (no bodykit imports), predicts
the train-split mean bind mesh for every test subject and prints the mean P2P in
meters as JSON.

    python3 scripts/mean_mesh_baseline.py DATA_DIR [--split test]
"""

import argparse
import json
from pathlib import Path

import numpy as np


def load_bind(root: Path):
    meta = json.loads((root / "dataset.json").read_text())
    raw = np.fromfile(root / "records.bin", dtype=meta["dtype"]).reshape(meta["count"], meta["stride"])
    f = meta["fields"]["bind"]
    bind = raw[:, f["offset"]:f["offset"] + f["size"]].astype(np.float64).reshape(meta["count"], -1, 3)
    return bind, meta["splits"]


def baseline_p2p(root, split: str = "test") -> float:
    bind, splits = load_bind(Path(root))
    mean = bind[splits["train"]].mean(axis=0)
    held = bind[splits[split]]
    return float(np.linalg.norm(held - mean, axis=-1).mean())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("data")
    ap.add_argument("--split", default="test")
    args = ap.parse_args()
    p2p = baseline_p2p(args.data, args.split)
    print(json.dumps({"split": args.split, "mean_mesh_p2p_m": p2p, "mean_mesh_p2p_mm": 1000 * p2p}))


if __name__ == "__main__":
    main()
