"""Sign-gradient patch attacks on rendered views.

All attacks share one loop: draw viewpoints, render the patched scene,
differentiate the attack objective with respect to the patch, step along the
sign of the (optionally momentum-accumulated) gradient and project back to
``[0, 1]``. The model is any callable ``loss_fn(images, labels) -> scalar``.
"""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import asdict, dataclass, replace
from typing import Callable

import numpy as np

from ..autodiff import Tensor, ops
from ..env import Action, CameraState, CardEnv, Scene

LossFn = Callable[[Tensor, np.ndarray], Tensor]


@dataclass(frozen=True)
class AttackConfig:
    iterations: int = 30
    alpha: float = 8 / 255
    mu: float = 1.0
    eot_samples: int = 10
    target: int | None = None  # None = untargeted
    seed: int = 0
    init: str = "uniform"  # uniform | zeros | texture
    max_horizon: int = 16

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if self.eot_samples < 1:
            raise ValueError("eot_samples must be >= 1")
        if self.init not in ("uniform", "zeros", "texture"):
            raise ValueError(f"unknown init {self.init!r}")

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


MIM_DEFAULTS = AttackConfig(iterations=150, alpha=1.5 / 255, mu=1.0)
PGD_DEFAULTS = AttackConfig(iterations=30, alpha=8 / 255)


@dataclass
class AttackResult:
    patch: np.ndarray
    zero_gradient: bool  # every step saw an all-zero gradient; patch is the initial one
    losses: list[float]  # objective at each step, before the update


def initial_patch(scene: Scene, cfg: AttackConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.init == "zeros":
        return np.zeros(scene.patch_shape, dtype=np.float32)
    if cfg.init == "texture":
        return scene.region()
    return rng.uniform(0.0, 1.0, scene.patch_shape).astype(np.float32)


def _objective(loss_fn: LossFn, images: Tensor, label: int, cfg: AttackConfig) -> Tensor:
    n = images.shape[0]
    if cfg.target is None:
        return loss_fn(images, np.full(n, label))
    return ops.neg(loss_fn(images, np.full(n, cfg.target)))


def _run(scene: Scene, views: Callable[[np.random.Generator], list[CameraState]], objective, cfg: AttackConfig,
         momentum: bool) -> AttackResult:
    rng = np.random.default_rng(cfg.seed)
    p = initial_patch(scene, cfg, rng)
    g_acc = np.zeros_like(p, dtype=np.float64)
    losses, any_grad = [], False
    for _ in range(cfg.iterations):
        P = Tensor(p, requires_grad=True)
        loss = objective(P, views(rng))
        loss.backward()
        g = P.grad.astype(np.float64)
        losses.append(loss.item())
        if np.any(g != 0):
            any_grad = True
        if momentum:
            l1 = np.abs(g).sum()
            g_acc = cfg.mu * g_acc + (g / l1 if l1 > 0 else g)
            step = np.sign(g_acc)
        else:
            step = np.sign(g)
        p = np.clip(p + cfg.alpha * step, 0.0, 1.0).astype(np.float32)
    if not any_grad:
        warnings.warn("attack saw zero gradient at every step; returning the initial patch", RuntimeWarning)
    return AttackResult(p, not any_grad, losses)


def _view_attack(scene, loss_fn, env: CardEnv, cfg: AttackConfig, n_views: int, momentum: bool) -> AttackResult:
    def views(rng):
        return [env.initial_state(rng) for _ in range(n_views)]

    def objective(P, states):
        images = ops.stack([env.render(scene, s, P).image for s in states])
        return _objective(loss_fn, images, scene.label, cfg)

    return _run(scene, views, objective, cfg, momentum)


def pgd_patch(scene: Scene, loss_fn: LossFn, env: CardEnv, cfg: AttackConfig = PGD_DEFAULTS) -> AttackResult:
    """``p <- clip(p + alpha * sign(grad), 0, 1)`` with one random in-bounds view per step."""
    return _view_attack(scene, loss_fn, env, cfg, 1, momentum=False)


def fgsm_patch(scene: Scene, loss_fn: LossFn, env: CardEnv, cfg: AttackConfig = PGD_DEFAULTS) -> AttackResult:
    return pgd_patch(scene, loss_fn, env, replace(cfg, iterations=1))


def mim_patch(scene: Scene, loss_fn: LossFn, env: CardEnv, cfg: AttackConfig = MIM_DEFAULTS) -> AttackResult:
    """Momentum iterative attack with L1-normalized gradient accumulation."""
    return _view_attack(scene, loss_fn, env, cfg, 1, momentum=True)


def eot_patch(scene: Scene, loss_fn: LossFn, env: CardEnv, cfg: AttackConfig = PGD_DEFAULTS) -> AttackResult:
    """PGD on the objective averaged over ``cfg.eot_samples`` uniformly drawn views per step."""
    return _view_attack(scene, loss_fn, env, cfg, cfg.eot_samples, momentum=False)


def usp_adaptive_patch(scene: Scene, perception, env: CardEnv, horizon: int,
                       cfg: AttackConfig = PGD_DEFAULTS) -> AttackResult:
    """Adaptive attack through the unrolled belief recurrence.

    The learned policy is replaced by actions drawn i.i.d. uniform over the
    per-step caps; each step averages the final-step loss over
    ``cfg.eot_samples`` such trajectories (observations ``o_0 .. o_horizon``).
    """
    if horizon < 0 or horizon > cfg.max_horizon:
        raise ValueError(f"horizon {horizon} outside [0, {cfg.max_horizon}]")
    caps = np.asarray(env.caps)

    def views(rng):
        trajectories = []
        for _ in range(cfg.eot_samples):
            s = env.initial_state(rng)
            states = [s]
            for _ in range(horizon):
                a = rng.uniform(-caps, caps)
                s = env.step(s, Action(float(a[0]), float(a[1])))
                states.append(s)
            trajectories.append(states)
        return trajectories

    def objective(P, trajectories):
        obs = ops.stack([ops.stack([env.render(scene, s, P).image for s in states]) for states in trajectories])
        _, logits = perception.unroll(obs)
        n = len(trajectories)
        labels = np.full(n, scene.label if cfg.target is None else cfg.target)
        loss = ops.mean(ops.cross_entropy(logits[-1], labels))
        return loss if cfg.target is None else ops.neg(loss)

    return _run(scene, views, objective, cfg, momentum=False)


def classifier_loss(model) -> LossFn:
    """Mean cross-entropy of a single-view model's logits."""
    def loss_fn(images: Tensor, labels) -> Tensor:
        return ops.mean(ops.cross_entropy(model(images), labels))

    return loss_fn


def perception_loss(perception) -> LossFn:
    """Single-observation loss of the recurrent model starting from the zero belief."""
    def loss_fn(images: Tensor, labels) -> Tensor:
        _, logits = perception.step(perception.initial_belief(images.shape[0]), images)
        return ops.mean(ops.cross_entropy(logits, labels))

    return loss_fn
