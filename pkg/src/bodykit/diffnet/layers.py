"""Layers used by every network in the package: FC, batch norm, PReLU."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
PRELU_INIT = 0.25


def parameter(data: np.ndarray, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Module:
    """Minimal container: every ``Tensor`` attribute is a parameter; buffers
    are plain ndarrays listed in ``_buffers``."""

    _buffers: tuple[str, ...] = ()
    training: bool = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            if isinstance(val, Tensor):
                yield prefix + key, val
        for key, child in self.children():
            yield from child.named_parameters(f"{prefix}{key}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters(prefix)}
        self._collect_buffers(prefix, state)
        return state

    def _collect_buffers(self, prefix: str, state: dict) -> None:
        for key in self._buffers:
            state[prefix + key] = getattr(self, key)
        for key, child in self.children():
            child._collect_buffers(f"{prefix}{key}.", state)

    def load_state_dict(self, state: dict[str, np.ndarray], prefix: str = "") -> None:
        for name, p in self.named_parameters(prefix):
            arr = state[name]
            if arr.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = np.array(arr, dtype=p.dtype)
        self._load_buffers(state, prefix)

    def _load_buffers(self, state, prefix) -> None:
        for key in self._buffers:
            cur = getattr(self, key)
            setattr(self, key, np.array(state[prefix + key], dtype=np.asarray(cur).dtype))
        for key, child in self.children():
            child._load_buffers(state, f"{prefix}{key}.")

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def freeze(self) -> "Module":
        """Stop recording gradients for every parameter (inference / fitting)."""
        for p in self.parameters():
            p.requires_grad = False
        return self

    def astype(self, dtype) -> "Module":
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        self._cast_buffers(dtype)
        return self

    def _cast_buffers(self, dtype) -> None:
        for key in self._buffers:
            setattr(self, key, np.asarray(getattr(self, key)).astype(dtype))
        for _, child in self.children():
            child._cast_buffers(dtype)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float32):
        # Kaiming-uniform for a leaky slope of 0.25 (the PReLU init)
        gain = np.sqrt(2.0 / (1 + PRELU_INIT ** 2))
        bound = gain * np.sqrt(3.0 / n_in)
        self.n_in, self.n_out = n_in, n_out
        self.weight = parameter(rng.uniform(-bound, bound, (n_out, n_in)).astype(dtype))
        self.bias = parameter(np.zeros(n_out, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise ValueError(f"Linear expects (..., {self.n_in}) input, got {x.shape} "
                             f"for weight {self.weight.shape}")
        return T.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, n: int, dtype=np.float32, eps: float = BN_EPS, momentum: float = BN_MOMENTUM):
        self.n = n
        self.eps = eps
        self.momentum = momentum
        self.scale = parameter(np.ones(n, dtype=dtype))
        self.shift = parameter(np.zeros(n, dtype=dtype))
        self.running_mean = np.zeros(n, dtype=dtype)
        self.running_var = np.ones(n, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.n:
            raise ValueError(f"BatchNorm expects (batch, {self.n}) input, got {x.shape}")
        if self.training:
            if x.shape[0] < 2:
                raise ValueError("BatchNorm in training mode needs a batch of at least 2")
            mu = T.mean(x, axis=0, keepdims=True)
            centered = x - mu
            var = T.mean(T.square(centered), axis=0, keepdims=True)
            xhat = centered / T.sqrt(var + self.eps)
            n = x.shape[0]
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean + m * mu.data[0]).astype(self.running_mean.dtype)
            unbiased = var.data[0] * n / (n - 1)
            self.running_var = ((1 - m) * self.running_var + m * unbiased).astype(self.running_var.dtype)
        else:
            xhat = (x - self.running_mean) / np.sqrt(self.running_var + self.eps).astype(x.dtype)
        return xhat * self.scale + self.shift


class PReLU(Module):
    def __init__(self, n: int, dtype=np.float32, init: float = PRELU_INIT):
        self.slope = parameter(np.full(n, init, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return T.prelu(x, self.slope)


class CoreBlock(Module):
    """FC -> BN -> PReLU; ``bn=False`` drops the normalization (ablation)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 bn: bool = True, dtype=np.float32):
        self.fc = Linear(n_in, n_out, rng, dtype)
        self.bn = BatchNorm(n_out, dtype) if bn else None
        self.act = PReLU(n_out, dtype)

    def forward(self, x: Tensor) -> Tensor:
        h = self.fc(x)
        if self.bn is not None:
            h = self.bn(h)
        return self.act(h)


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x
