"""Directory checkpoints: ``manifest.json`` + ``weights.bin``.

The manifest lists every tensor (name, shape, dtype, byte offset) in file
order, next to free-form metadata (hyperparameters, seed, normalization
constants). ``weights.bin`` is the raw little-endian concatenation.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

import numpy as np

MANIFEST = "manifest.json"
WEIGHTS = "weights.bin"


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], meta: dict[str, Any]) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(path / WEIGHTS, "wb") as fh:
        for name in sorted(tensors):
            arr = np.asarray(tensors[name])
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            raw = np.ascontiguousarray(le).tobytes()
            entries.append({"name": name, "shape": list(arr.shape),
                            "dtype": le.dtype.str, "offset": offset, "nbytes": len(raw)})
            fh.write(raw)
            offset += len(raw)
    manifest = {"format": "bodykit-checkpoint/1", "tensors": entries, **meta}
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    path = Path(path)
    manifest = json.loads((path / MANIFEST).read_text())
    blob = (path / WEIGHTS).read_bytes()
    tensors = {}
    for e in manifest["tensors"]:
        arr = np.frombuffer(blob, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"], dtype=int)),
                            offset=e["offset"])
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(np.dtype(e["dtype"]).newbyteorder("="))
    meta = {k: v for k, v in manifest.items() if k != "tensors"}
    return tensors, meta


def checkpoint_hash(path: str | Path) -> str:
    path = Path(path)
    h = hashlib.sha256()
    h.update((path / MANIFEST).read_bytes())
    h.update((path / WEIGHTS).read_bytes())
    return h.hexdigest()
