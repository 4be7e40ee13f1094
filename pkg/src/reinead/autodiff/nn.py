"""Parameter containers, layers and the momentum-SGD optimizer."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tensor, default_dtype


class Module:
    """Minimal parameter container; submodules and parameters are discovered by attribute."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, p in params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self


def param(arr) -> Tensor:
    return Tensor(arr, requires_grad=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, scale: float | None = None):
        scale = np.sqrt(2.0 / n_in) if scale is None else scale
        self.weight = param(rng.normal(0.0, scale, (n_in, n_out)))
        self.bias = param(np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.add(ops.matmul(x, self.weight), self.bias)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, stride: int = 1, padding: int = 0):
        self.stride = stride
        self.padding = padding
        self.weight = param(rng.normal(0.0, np.sqrt(2.0 / (k * k * cin)), (k, k, cin, cout)))
        self.bias = param(np.zeros(cout))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class SGD:
    """Stochastic gradient descent with heavy-ball momentum.

    ``step`` consumes the accumulated ``.grad`` of each parameter; the caller
    zeroes gradients between steps.
    """

    def __init__(self, params: list[Tensor], lr: float, momentum: float = 0.9, max_grad_norm: float | None = None):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.max_grad_norm = max_grad_norm
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def grad_norm(self) -> float:
        sq = sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in self.params if p.grad is not None)
        return float(np.sqrt(sq))

    def step(self, ascend: bool = False) -> None:
        scale = 1.0
        if self.max_grad_norm is not None:
            norm = self.grad_norm()
            if norm > self.max_grad_norm:
                scale = self.max_grad_norm / (norm + 1e-12)
        sign = 1.0 if ascend else -1.0
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += scale * p.grad
            p.data = (p.data + sign * self.lr * v).astype(p.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def state(self) -> list[np.ndarray]:
        return [v.copy() for v in self.velocity]


def new_tensor(shape, fill: float = 0.0) -> Tensor:
    return Tensor(np.full(shape, fill, dtype=default_dtype()))
