from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(fn: Callable[[], Tensor], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``fn()`` with respect to ``x.data`` (in place)."""
    g = np.zeros_like(x.data, dtype=np.float64)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn().data)
        flat[i] = orig - h
        fm = float(fn().data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Relative error between autodiff and central differences.

    The error is taken over the concatenated gradient of all ``inputs``, so
    parameters whose true gradient is exactly zero (an FC bias feeding batch
    norm) do not turn finite-difference noise into a spurious failure.
    ``fn`` must rebuild its graph on every call; inputs must be float64.
    """
    for x in inputs:
        if x.dtype != np.float64:
            raise TypeError(f"gradient checks need float64 inputs, got {x.dtype}")
        x.grad = None
    backward(fn())
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]
    numeric = [numerical_grad(fn, x, h) for x in inputs]
    return relative_error(np.concatenate([a.ravel() for a in analytic]),
                          np.concatenate([n.ravel() for n in numeric]))
