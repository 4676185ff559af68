"""Random Fourier features: y -> [cos(2 pi B y), sin(2 pi B y)]."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .diffnet import tensor as T
from .diffnet.tensor import Tensor

MODES = ("matrix", "per_coordinate")


class EncoderMismatch(ValueError):
    pass


@dataclass(frozen=True)
class FourierEncoder:
    """Frozen random frequency matrix.

    ``matrix`` mode: B is (f, d) and the output has 2f features.
    ``per_coordinate`` mode: B is (d, f), each coordinate gets its own f
    frequencies, and the output has d * 2f features ordered coordinate-major
    as [cos_1..f, sin_1..f] per coordinate.
    f = 0 disables the encoding: inputs pass through unchanged.
    """

    d: int
    f: int
    sigma: float = 1.0
    seed: int = 0
    mode: str = "matrix"
    B: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown encoding mode {self.mode!r}")
        if self.B is None:
            rng = np.random.default_rng(self.seed)
            shape = (self.f, self.d) if self.mode == "matrix" else (self.d, self.f)
            object.__setattr__(self, "B", rng.normal(0.0, self.sigma, shape))
        else:
            object.__setattr__(self, "B", np.asarray(self.B, dtype=np.float64))

    @property
    def out_dim(self) -> int:
        if self.f == 0:
            return self.d
        return 2 * self.f * (self.d if self.mode == "per_coordinate" else 1)

    @property
    def hash(self) -> str:
        h = hashlib.sha256(f"{self.mode}:{self.d}:{self.f}".encode())
        h.update(np.ascontiguousarray(self.B, dtype="<f8").tobytes())
        return h.hexdigest()[:16]

    def __call__(self, y):
        return self.encode(y)

    def encode(self, y):
        """Encode (d,) or (N, d); numpy in gives numpy out, Tensor in gives Tensor out."""
        is_tensor = isinstance(y, Tensor)
        shape = y.shape
        if shape[-1] != self.d:
            raise ValueError(f"encoder expects {self.d} input features, got {shape[-1]}")
        if self.f == 0:
            return y
        if not is_tensor:
            y = np.asarray(y, dtype=np.float64)
            if self.mode == "matrix":
                phase = 2 * np.pi * y @ self.B.T
            else:
                phase = (2 * np.pi * y[..., :, None] * self.B).reshape(*shape[:-1], self.d, self.f)
            out = np.concatenate([np.cos(phase), np.sin(phase)], axis=-1)
            return out.reshape(*shape[:-1], self.out_dim)
        B = Tensor(self.B.astype(y.dtype))
        if self.mode == "matrix":
            phase = (2 * np.pi) * (y @ B.T)
        else:
            phase = (2 * np.pi) * (T.reshape(y, (*shape, 1)) * B)
        out = T.concat([T.cos(phase), T.sin(phase)], axis=-1)
        return T.reshape(out, (*shape[:-1], self.out_dim))

    def to_meta(self) -> dict:
        return {"d": self.d, "f": self.f, "sigma": self.sigma, "seed": self.seed,
                "mode": self.mode, "hash": self.hash}

    @classmethod
    def from_meta(cls, meta: dict, B: np.ndarray) -> "FourierEncoder":
        enc = cls(meta["d"], meta["f"], meta["sigma"], meta["seed"], meta["mode"], B)
        if enc.hash != meta["hash"]:
            raise EncoderMismatch(f"stored frequency matrix hashes to {enc.hash}, "
                                  f"manifest says {meta['hash']}")
        return enc

    def check(self, other_hash: str) -> None:
        if other_hash != self.hash:
            raise EncoderMismatch(f"inputs were encoded with {other_hash}, this model uses {self.hash}")
