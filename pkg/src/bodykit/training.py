"""Bits shared by the training loops: batching, loss curves, divergence handling."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, is_dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .diffnet import Module


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient goes non-finite; the model holds the last finite state."""


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Shuffled index batches. A trailing batch of one is merged into the
    previous one, since batch norm cannot train on a single sample."""
    order = rng.permutation(n)
    starts = list(range(0, n, batch_size))
    if len(starts) > 1 and n - starts[-1] < 2:
        starts.pop()
    for i, s in enumerate(starts):
        end = starts[i + 1] if i + 1 < len(starts) else n
        yield order[s:end]


class Curves:
    def __init__(self, *names: str):
        self.names = ("epoch",) + names
        self.rows: list[tuple] = []

    def add(self, epoch: int, **values: float) -> None:
        self.rows.append((epoch,) + tuple(float(values[n]) for n in self.names[1:]))

    def last(self, name: str) -> float:
        return self.rows[-1][self.names.index(name)]

    def column(self, name: str) -> list[float]:
        i = self.names.index(name)
        return [r[i] for r in self.rows]

    def to_meta(self) -> dict:
        return {n: self.column(n) for n in self.names}

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.names)
            w.writerows(self.rows)


def cosine_lr(base: float, epoch: int, epochs: int, schedule: str = "cosine") -> float:
    """Learning rate for ``epoch``: constant, or cosine-annealed from ``base`` towards 0."""
    if schedule == "constant":
        return base
    if schedule != "cosine":
        raise ValueError(f"unknown lr schedule {schedule!r}")
    return 0.5 * base * (1.0 + np.cos(np.pi * epoch / max(epochs, 1)))


def snapshot(module: Module) -> dict[str, np.ndarray]:
    return {k: np.array(v, copy=True) for k, v in module.state_dict().items()}


def config_dict(cfg) -> dict:
    return asdict(cfg) if is_dataclass(cfg) else dict(cfg)


def config_hash(cfg) -> str:
    return hashlib.sha256(json.dumps(config_dict(cfg), sort_keys=True).encode()).hexdigest()[:16]


def batch_means(fn, n: int, batch_size: int = 256) -> np.ndarray:
    """Concatenate ``fn(slice)`` over consecutive slices of ``range(n)``."""
    return np.concatenate([fn(slice(s, min(s + batch_size, n))) for s in range(0, n, batch_size)])
