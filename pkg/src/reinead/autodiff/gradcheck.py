"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, precision


def numeric_grad(fn: Callable[[], Tensor], x: Tensor, eps: float = 1e-5) -> np.ndarray:
    """d fn() / d x by central differences; ``fn`` must re-read ``x.data``."""
    g = np.zeros_like(x.data, dtype=np.float64)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(np.sum(fn().data))
        flat[i] = orig - eps
        fm = float(np.sum(fn().data))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max |a-b| / max(|a|, |b|, floor), elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def check_gradients(
    fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5, floor: float = 1e-8
) -> float:
    """Return the worst relative error between reverse-mode and numeric gradients.

    Runs in float64; ``inputs`` should already hold float64 data.
    """
    with precision(np.float64):
        for x in inputs:
            x.zero_grad()
        out = fn()
        loss = out if out.size == 1 else out.sum()
        loss.backward()
        worst = 0.0
        for x in inputs:
            analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
            numeric = numeric_grad(fn, x, eps)
            worst = max(worst, relative_error(analytic, numeric, floor))
    return worst
