"""Episode collection: render -> patch -> encode -> fuse -> predict -> act -> transition."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, no_grad, ops
from ..env import Action, CardEnv, Scene
from ..policy import ActionDistribution, log_prob, policy_forward, sample_action, value
from .agent import Agent

POLICIES = ("learned", "random", "static")


@dataclass
class Trajectory:
    """One episode; step arrays have ``H + 1`` rows, action arrays ``H``."""

    observations: np.ndarray  # (H+1, R, R, 3), patched when a patch was applied
    beliefs: np.ndarray  # (H+1, d_b)
    logits: np.ndarray  # (H+1, K)
    losses: np.ndarray  # (H+1,)
    entropies: np.ndarray  # (H+1,)
    values: np.ndarray  # (H+1,)
    actions: np.ndarray  # (H, 2) clamped
    raw_actions: np.ndarray  # (H, 2) pre-clamp samples
    log_probs: np.ndarray  # (H,)
    states: np.ndarray  # (H+1, 2)
    label: int
    patch_id: int | None  # None = clean
    seed: int
    valid: bool = True

    @property
    def horizon(self) -> int:
        return len(self.actions)

    @property
    def true_probs(self) -> np.ndarray:
        z = self.logits - self.logits.max(axis=-1, keepdims=True)
        p = np.exp(z)
        return (p / p.sum(axis=-1, keepdims=True))[:, self.label]

    @property
    def correct(self) -> np.ndarray:
        return self.logits.argmax(axis=-1) == self.label


def rollout(agent: Agent, env: CardEnv, scenes: list[Scene], patches: list, seeds: list[int], horizon: int,
            policy: str = "learned", deterministic: bool = False, patch_ids: list | None = None,
            max_horizon: int = 16) -> list[Trajectory]:
    """Run ``len(scenes)`` episodes in lockstep.

    ``patches[i]`` is an array or ``None`` (clean). Each episode draws its
    initial state and action noise from its own ``seeds[i]`` stream.
    """
    if not 1 <= horizon <= max_horizon:
        raise ValueError(f"horizon {horizon} outside [1, {max_horizon}]")
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    n = len(scenes)
    if not (len(patches) == len(seeds) == n):
        raise ValueError("scenes, patches and seeds must have equal length")
    patch_ids = patch_ids if patch_ids is not None else [None if p is None else -1 for p in patches]
    rngs = [np.random.default_rng(s) for s in seeds]
    states = [env.initial_state(r) for r in rngs]
    caps = np.asarray(env.caps)
    per_step = {k: [] for k in ("obs", "b", "logits", "loss", "ent", "v", "a", "raw", "lp", "s")}
    degenerate = np.zeros(n, dtype=bool)
    labels = np.array([sc.label for sc in scenes])
    m = agent.perception
    with no_grad():
        b = m.initial_belief(n)
        for t in range(horizon + 1):
            obs = [env.render(sc, s, None if p is None else Tensor(p)) for sc, s, p in zip(scenes, states, patches)]
            degenerate |= np.array([o.degenerate for o in obs])
            images = np.stack([o.image.data for o in obs])
            b, logits = m.step(b, Tensor(images))
            per_step["obs"].append(images)
            per_step["b"].append(b.data)
            per_step["logits"].append(logits.data)
            per_step["loss"].append(ops.cross_entropy(logits, labels).data)
            per_step["ent"].append(ops.entropy(logits).data)
            per_step["v"].append(value(agent.pv, b).data)
            per_step["s"].append(np.array([s.as_array() for s in states]))
            if t == horizon:
                break
            dist = policy_forward(agent.pv, b)
            acts, raws = _choose(dist, rngs, caps, policy, deterministic)
            per_step["a"].append(acts)
            per_step["raw"].append(raws)
            per_step["lp"].append(log_prob(dist, raws).data if policy == "learned" else np.zeros(n))
            states = [env.step(s, Action(float(a[0]), float(a[1]))) for s, a in zip(states, acts)]
    st = {k: np.stack(v, axis=1) for k, v in per_step.items()}
    return [
        Trajectory(
            observations=st["obs"][i], beliefs=st["b"][i], logits=st["logits"][i],
            losses=st["loss"][i].astype(np.float64), entropies=st["ent"][i].astype(np.float64),
            values=st["v"][i].astype(np.float64), actions=st["a"][i], raw_actions=st["raw"][i],
            log_probs=st["lp"][i].astype(np.float64), states=st["s"][i], label=int(labels[i]),
            patch_id=patch_ids[i], seed=int(seeds[i]), valid=not degenerate[i],
        )
        for i in range(n)
    ]


def _choose(dist, rngs, caps, policy: str, deterministic: bool):
    n = len(rngs)
    if policy == "static":
        z = np.zeros((n, 2))
        return z, z
    if policy == "random":
        a = np.stack([r.uniform(-caps, caps) for r in rngs])
        return a, a
    mean = dist.mean.data.astype(np.float64)
    if deterministic:
        a = np.clip(mean, -caps, caps)
        return a, mean
    out = [sample_action(_row(dist, i), r, caps) for i, r in enumerate(rngs)]
    return np.concatenate([o[0] for o in out]), np.concatenate([o[1] for o in out])


def _row(dist, i):
    return ActionDistribution(Tensor(dist.mean.data[i:i + 1]), dist.std)
