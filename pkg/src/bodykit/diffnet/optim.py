from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor


FLUSH_EVERY = 100
TINY = 1e-30  # moments below this are zeroed every FLUSH_EVERY steps
TINY_GRAD = 1e-13  # gradient entries below this are treated as zero


class NonFiniteGradient(FloatingPointError):
    pass


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              m: Sequence[np.ndarray], v: Sequence[np.ndarray], t: int,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, weight_decay: float = 0.0,
              names: Sequence[str] | None = None,
              scratch: Sequence[np.ndarray] | None = None) -> None:
    """One bias-corrected Adam update, in place on ``params``, ``m`` and ``v``.

    Every gradient is checked before anything is written, so a non-finite
    gradient leaves parameters and moments untouched. ``scratch`` buffers shaped
    like the params avoid allocating temporaries on every step.

    Gradient entries below TINY_GRAD are dropped: their squares land in the
    denormal range, which slows every later pass over ``v`` several-fold, and
    against eps = 1e-8 they would move a parameter by at most lr * 1e-5.
    """
    if t < 1:
        raise ValueError(f"Adam step counter must start at 1, got {t}")
    for i, g in enumerate(grads):
        # a finite sum rules out nan/inf cheaply; overflow falls through to the exact check
        if not np.isfinite(g.sum()) and not np.all(np.isfinite(g)):
            label = names[i] if names else f"#{i}"
            raise NonFiniteGradient(f"non-finite gradient in parameter {label}; step {t} aborted")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for i, (p, g, mi, vi) in enumerate(zip(params, grads, m, v)):
        if weight_decay:
            g = g + weight_decay * p
        buf = scratch[i] if scratch is not None else np.empty_like(mi)
        np.abs(g, out=buf)
        tiny = buf < TINY_GRAD
        if tiny.any():
            g = np.where(tiny, 0.0, g).astype(mi.dtype, copy=False)
        np.multiply(g, 1.0 - beta1, out=buf)
        mi *= beta1
        mi += buf
        np.square(g, out=buf)
        buf *= 1.0 - beta2
        vi *= beta2
        vi += buf
        # p -= lr * (m / c1) / (sqrt(v / c2) + eps)
        np.sqrt(vi, out=buf)
        buf *= 1.0 / np.sqrt(c2)
        buf += eps
        np.divide(mi, buf, out=buf)
        buf *= lr / c1
        p -= buf


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0, names: Sequence[str] | None = None):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.names = list(names) if names is not None else None
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self._scratch = [np.empty_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adam_step([p.data for p in self.params], grads, self.m, self.v, self.t + 1,
                  self.lr, self.betas[0], self.betas[1], self.eps, self.weight_decay,
                  self.names, self._scratch)
        self.t += 1
        if self.t % FLUSH_EVERY == 0:
            self._flush_tiny()

    def _flush_tiny(self) -> None:
        # moments of parameters whose gradient stays zero decay geometrically into
        # the denormal range; below TINY they move a parameter by less than lr * 1e-22
        for mi, vi, buf in zip(self.m, self.v, self._scratch):
            np.abs(mi, out=buf)
            mi[buf < TINY] = 0.0
            vi[vi < TINY] = 0.0
