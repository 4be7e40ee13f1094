"""Dense rewards from per-step losses and generalized advantage estimation."""
from __future__ import annotations

from enum import Enum

import numpy as np


class RewardMode(str, Enum):
    UNCERTAINTY_SHAPED = "uncertainty_shaped"
    ENTROPY_DEDUCTION = "entropy_deduction"
    BINARY_OUTCOME = "binary_outcome"


def compute_rewards(mode: RewardMode | str, gamma: float, losses=None, entropies=None, true_probs=None,
                    kappa: float = 0.95) -> np.ndarray:
    """Rewards ``r_1 .. r_H`` from step-indexed quantities of length ``H + 1`` (last axis).

    ``uncertainty_shaped``: ``L_{t-1} - gamma * L_t``;
    ``entropy_deduction``: ``H_{t-1} - gamma * H_t``;
    ``binary_outcome``: ``1[p_t(y) > kappa]``. Step 0 earns no reward.
    """
    mode = RewardMode(mode)
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    if mode is RewardMode.UNCERTAINTY_SHAPED:
        if losses is None:
            raise ValueError("uncertainty_shaped rewards need per-step losses")
        x = np.asarray(losses, dtype=np.float64)
        return x[..., :-1] - gamma * x[..., 1:]
    if mode is RewardMode.ENTROPY_DEDUCTION:
        if entropies is None:
            raise ValueError("entropy_deduction rewards need per-step entropies")
        x = np.asarray(entropies, dtype=np.float64)
        return x[..., :-1] - gamma * x[..., 1:]
    if true_probs is None:
        raise ValueError("binary_outcome rewards need per-step true-class probabilities")
    if not 0 < kappa < 1:
        raise ValueError(f"kappa must lie in (0, 1), got {kappa}")
    p = np.asarray(true_probs, dtype=np.float64)
    return (p[..., 1:] > kappa).astype(np.float64)


def discounted_sum(rewards, gamma: float) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    return r @ (gamma ** np.arange(r.shape[-1]))


def estimate_advantages(rewards, values, gamma: float, gae_lambda: float,
                        bootstrap_final: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """GAE over ``rewards`` ``(..., H)`` and step values ``(..., H + 1)``.

    ``delta_t = r_t + gamma * V(b_t) - V(b_{t-1})`` for ``t = 1..H``; the
    episode is terminal at ``H`` so ``V(b_H)`` is dropped unless
    ``bootstrap_final``. Returns ``(advantages, return_targets)``, both
    ``(..., H)``, where index ``t-1`` belongs to action ``a_{t-1}``.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    H = r.shape[-1]
    if v.shape[-1] != H + 1:
        raise ValueError(f"values need H+1={H + 1} entries, got {v.shape[-1]}")
    nxt = v[..., 1:].copy()
    if not bootstrap_final:
        nxt[..., -1] = 0.0
    delta = r + gamma * nxt - v[..., :-1]
    adv = np.zeros_like(delta)
    running = np.zeros(delta.shape[:-1])
    for t in range(H - 1, -1, -1):
        running = delta[..., t] + gamma * gae_lambda * running
        adv[..., t] = running
    return adv, adv + v[..., :-1]


def normalize_advantages(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    adv = np.asarray(adv, dtype=np.float64)
    if adv.size < 2:
        return adv - adv.mean()
    return (adv - adv.mean()) / (adv.std() + eps)
