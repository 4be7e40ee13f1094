"""Gaussian viewpoint policy and value head over the perception belief."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Linear, Module, Tensor, ops


@dataclass
class ActionDistribution:
    mean: Tensor  # (N, 2)
    std: np.ndarray  # (2,)

    def __post_init__(self):
        if np.any(np.asarray(self.std) <= 0):
            raise ValueError(f"std must be strictly positive, got {self.std}")


class PolicyValue(Module):
    """``mean = caps * tanh(MLP(b))``, fixed ``std = std_fraction * caps``; separate value MLP."""

    def __init__(self, d_b: int, caps: tuple[float, float], rng: np.random.Generator,
                 hidden: int = 64, std_fraction: float = 0.1):
        self.caps = np.asarray(caps, dtype=np.float64)
        self.std = std_fraction * self.caps
        self.pi1 = Linear(d_b, hidden, rng)
        self.pi2 = Linear(hidden, 2, rng, scale=0.01)
        self.v1 = Linear(d_b, hidden, rng)
        self.v2 = Linear(hidden, 1, rng, scale=0.01)

    def policy_parameters(self) -> list[Tensor]:
        return [self.pi1.weight, self.pi1.bias, self.pi2.weight, self.pi2.bias]

    def value_parameters(self) -> list[Tensor]:
        return [self.v1.weight, self.v1.bias, self.v2.weight, self.v2.bias]


def policy_forward(pv: PolicyValue, b: Tensor) -> ActionDistribution:
    h = ops.tanh(pv.pi1(b))
    caps = pv.caps.astype(b.dtype)
    return ActionDistribution(ops.mul(ops.tanh(pv.pi2(h)), caps), pv.std)


def value(pv: PolicyValue, b: Tensor) -> Tensor:
    """(N,) state values."""
    v = pv.v2(ops.tanh(pv.v1(b)))
    return ops.reshape(v, (v.shape[0],))


def sample_action(dist: ActionDistribution, rng: np.random.Generator, caps) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(clamped, raw)``; the log-prob is taken at ``raw``."""
    mean = dist.mean.data.astype(np.float64)
    raw = mean + dist.std * rng.standard_normal(mean.shape)
    caps = np.asarray(caps, dtype=np.float64)
    return np.clip(raw, -caps, caps), raw


def log_prob(dist: ActionDistribution, raw) -> Tensor:
    """Diagonal-Gaussian log density, summed over action dims -> (N,)."""
    std = np.asarray(dist.std, dtype=dist.mean.dtype)
    z = ops.div(ops.sub(Tensor(np.asarray(raw, dtype=dist.mean.dtype)), dist.mean), std)
    const = float(np.sum(np.log(std * np.sqrt(2 * np.pi))))
    return ops.sub(ops.mul(ops.sum(ops.mul(z, z), axis=-1), -0.5), const)
