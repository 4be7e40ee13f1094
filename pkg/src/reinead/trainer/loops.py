"""Backbone training, offline perception pretraining and online joint training."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..attacks import PatchBank
from ..autodiff import SGD, Tensor, no_grad
from ..env import CardEnv, Scene
from ..perception import PerceptionSpec, SingleViewClassifier
from .agent import Agent
from .returns import RewardMode, compute_rewards, discounted_sum, estimate_advantages, normalize_advantages
from .rollout import Trajectory, rollout
from .updates import PolicyBatch, percep_update, ppo_update

# wallclock goes to a separate timing file so metric CSVs are reproducible byte for byte
METRIC_COLUMNS = ("iteration", "mean_return", "clean_acc", "patched_acc", "mean_final_loss", "mean_entropy",
                  "policy_dropped")
TIMING_COLUMNS = ("iteration", "wallclock_s")
OFFLINE_COLUMNS = ("epoch", "loss")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    horizon: int = 4
    gamma: float = 0.95
    entropy_coef: float = 0.1
    clip_eps: float = 0.2
    epochs: int = 2
    iterations: int = 200
    batch_episodes: int = 32
    minibatch: int = 16
    lr_offline: float = 1e-3
    lr_online: float = 2.5e-4
    lr_policy: float | None = None  # defaults to lr_online
    momentum: float = 0.9
    gae_lambda: float = 0.95
    value_coef: float = 0.5
    r_patch: float = 0.4
    reward_mode: str = RewardMode.UNCERTAINTY_SHAPED.value
    kappa: float = 0.95
    entropy_final_only: bool = False
    offline_epochs: int = 10
    offline_batches: int = 20
    max_horizon: int = 16
    max_grad_norm: float | None = None
    checkpoint_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0 < self.clip_eps < 1:
            raise ValueError(f"clip_eps must lie in (0, 1), got {self.clip_eps}")
        if not 1 <= self.horizon <= self.max_horizon:
            raise ValueError(f"horizon must lie in [1, {self.max_horizon}], got {self.horizon}")
        if self.entropy_coef < 0:
            raise ValueError("entropy_coef must be >= 0")
        if not 0 <= self.r_patch <= 1:
            raise ValueError("r_patch must lie in [0, 1]")
        if min(self.epochs, self.iterations, self.offline_epochs, self.offline_batches) < 0:
            raise ValueError("epoch and iteration counts must be >= 0")
        if self.batch_episodes < 1 or self.minibatch < 1:
            raise ValueError("batch sizes must be >= 1")
        RewardMode(self.reward_mode)


@dataclass
class BackboneConfig:
    steps: int = 3000
    batch: int = 32
    lr: float = 0.02
    momentum: float = 0.9
    seed: int = 0


def _views(env: CardEnv, scenes: list[Scene], rng: np.random.Generator, n: int):
    idx = rng.integers(0, len(scenes), n)
    images = np.stack([env.render(scenes[i], env.initial_state(rng)).image.data for i in idx])
    return images, np.array([scenes[i].label for i in idx])


def train_backbone(scenes: list[Scene], env: CardEnv, spec: PerceptionSpec, cfg: BackboneConfig,
                   log=None) -> SingleViewClassifier:
    """Single-view classifier on random clean views; the OAPA attack target and passive baseline."""
    if not scenes:
        raise ValueError("empty dataset")
    model = SingleViewClassifier(spec, np.random.default_rng([cfg.seed, 2]))
    opt = SGD(model.parameters(), cfg.lr, cfg.momentum)
    rng = np.random.default_rng([cfg.seed, 3])
    for step in range(cfg.steps):
        x, y = _views(env, scenes, rng, cfg.batch)
        opt.zero_grad()
        loss = model.loss(Tensor(x), y)
        loss.backward()
        opt.step()
        if not np.isfinite(loss.item()):
            raise TrainingDiverged(f"backbone loss became non-finite at step {step}")
        if log and step % 500 == 0:
            log(f"backbone step {step} loss {loss.item():.4f}")
    return model


def classifier_accuracy(model: SingleViewClassifier, env: CardEnv, scenes: list[Scene], seed: int,
                        views_per_scene: int = 4) -> float:
    rng = np.random.default_rng(seed)
    correct = 0
    with no_grad():
        for sc in scenes:
            imgs = np.stack([env.render(sc, env.initial_state(rng)).image.data for _ in range(views_per_scene)])
            correct += int((model(Tensor(imgs)).data.argmax(-1) == sc.label).sum())
    return correct / (len(scenes) * views_per_scene)


@dataclass
class EpisodePlan:
    scenes: list[Scene]
    patches: list
    patch_ids: list
    seeds: list[int]


def plan_episodes(scenes: list[Scene], bank: PatchBank, n: int, r_patch: float,
                  rng: np.random.Generator) -> EpisodePlan:
    """Uniform scenes; a fraction ``r_patch`` of episodes carries a uniformly drawn bank patch."""
    idx = rng.integers(0, len(scenes), n)
    patched = rng.random(n) < r_patch
    chosen = [scenes[i] for i in idx]
    patches, ids = [], []
    for sc, flag in zip(chosen, patched):
        if flag:
            p, pid = bank.sample(rng, sc.patch_shape)
            patches.append(p)
            ids.append(pid)
        else:
            patches.append(None)
            ids.append(None)
    seeds = rng.integers(0, 2**31 - 1, n).tolist()
    return EpisodePlan(chosen, patches, ids, seeds)


class _DivergenceGuard:
    """Abort when the loss stays above 10x its first value for 3 consecutive checks.

    The reference is floored so a near-zero first loss cannot trip the guard on noise.
    """

    def __init__(self, what: str, factor: float = 10.0, patience: int = 3, floor: float = 0.1):
        self.what, self.factor, self.patience, self.floor = what, factor, patience, floor
        self.initial = None
        self.strikes = 0
        self.history: list[float] = []

    def check(self, loss: float) -> None:
        self.history.append(loss)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"{self.what}: non-finite loss after {len(self.history)} checks; "
                                   f"recent losses {self.history[-5:]}")
        if self.initial is None:
            self.initial = max(loss, self.floor)
            return
        self.strikes = self.strikes + 1 if loss > self.factor * self.initial else 0
        if self.strikes >= self.patience:
            raise TrainingDiverged(f"{self.what}: loss {loss:.4g} above {self.factor}x initial "
                                   f"{self.initial:.4g} for {self.patience} consecutive checks; "
                                   f"recent losses {self.history[-5:]}")


def offline_pretrain(agent: Agent, env: CardEnv, scenes: list[Scene], bank: PatchBank, cfg: TrainConfig,
                     log=None, out_dir: str | Path | None = None) -> list[float]:
    """Perception-only training on random-policy trajectories; returns the per-epoch mean loss."""
    writer = MetricsLog(Path(out_dir) / "offline_metrics.csv", OFFLINE_COLUMNS) if out_dir is not None else None
    opt = SGD(agent.perception.parameters(), cfg.lr_offline, cfg.momentum, cfg.max_grad_norm)
    guard = _DivergenceGuard("offline_pretrain")
    for epoch in range(cfg.offline_epochs):
        losses = []
        for k in range(cfg.offline_batches):
            rng = np.random.default_rng([cfg.seed, 11, epoch, k])
            plan = plan_episodes(scenes, bank, cfg.batch_episodes, cfg.r_patch, rng)
            trajs = rollout(agent, env, plan.scenes, plan.patches, plan.seeds, cfg.horizon, policy="random",
                            patch_ids=plan.patch_ids, max_horizon=cfg.max_horizon)
            trajs = [t for t in trajs if t.valid]
            if not trajs:
                continue
            obs = np.stack([t.observations for t in trajs])
            losses.append(percep_update(agent.perception, opt, obs, [t.label for t in trajs], cfg.entropy_coef,
                                        cfg.entropy_final_only))
        mean = float(np.mean(losses)) if losses else float("nan")
        guard.check(mean)
        if writer:
            writer.append({"epoch": epoch, "loss": mean})
        if log:
            log(f"offline epoch {epoch} loss {mean:.4f}")
    agent.pretrained = True
    return guard.history


def trajectory_rewards(trajs: list[Trajectory], cfg: TrainConfig) -> np.ndarray:
    return compute_rewards(
        cfg.reward_mode, cfg.gamma,
        losses=np.stack([t.losses for t in trajs]),
        entropies=np.stack([t.entropies for t in trajs]),
        true_probs=np.stack([t.true_probs for t in trajs]),
        kappa=cfg.kappa,
    )


def online_train(agent: Agent, env: CardEnv, scenes: list[Scene], bank: PatchBank, cfg: TrainConfig,
                 out_dir: str | Path | None = None, allow_scratch: bool = False, config_hash: str = "",
                 log=None) -> list[dict]:
    """Joint PPO + perception training; returns one metrics row per iteration."""
    if not agent.pretrained and not allow_scratch:
        raise RuntimeError("online training requires offline pretraining first (pass allow_scratch to override)")
    p_opt = SGD(agent.perception.parameters(), cfg.lr_online, cfg.momentum, cfg.max_grad_norm)
    lr_pi = cfg.lr_policy if cfg.lr_policy is not None else cfg.lr_online
    pi_opt = SGD(agent.pv.parameters(), lr_pi, cfg.momentum, cfg.max_grad_norm)
    guard = _DivergenceGuard("online_train")
    writer = MetricsLog(Path(out_dir) / "metrics.csv") if out_dir is not None else None
    timing = MetricsLog(Path(out_dir) / "timing.csv", TIMING_COLUMNS) if out_dir is not None else None
    rows, start, dropped = [], time.perf_counter(), 0
    for it in range(cfg.iterations):
        rng = np.random.default_rng([cfg.seed, 23, it])
        plan = plan_episodes(scenes, bank, cfg.batch_episodes, cfg.r_patch, rng)
        trajs = rollout(agent, env, plan.scenes, plan.patches, plan.seeds, cfg.horizon, policy="learned",
                        patch_ids=plan.patch_ids, max_horizon=cfg.max_horizon)
        trajs = [t for t in trajs if t.valid]
        if not trajs:
            continue
        rewards = trajectory_rewards(trajs, cfg)
        values = np.stack([t.values for t in trajs])
        adv, ret = estimate_advantages(rewards, values, cfg.gamma, cfg.gae_lambda)
        n, H = adv.shape
        flat = PolicyBatch(
            beliefs=np.stack([t.beliefs[:-1] for t in trajs]).reshape(n * H, -1),
            raw_actions=np.stack([t.raw_actions for t in trajs]).reshape(n * H, 2),
            old_log_probs=np.stack([t.log_probs for t in trajs]).reshape(n * H),
            advantages=normalize_advantages(adv).reshape(n * H),
            returns=ret.reshape(n * H),
        )
        obs = np.stack([t.observations for t in trajs])
        labels = np.array([t.label for t in trajs])
        p_losses = []
        for epoch in range(cfg.epochs):
            order = np.random.default_rng([cfg.seed, 29, it, epoch]).permutation(n)
            for lo in range(0, n, cfg.minibatch):
                ep = order[lo:lo + cfg.minibatch]
                rows_idx = (ep[:, None] * H + np.arange(H)).ravel()
                sub = PolicyBatch(*(getattr(flat, f)[rows_idx] for f in
                                    ("beliefs", "raw_actions", "old_log_probs", "advantages", "returns")))
                stats = ppo_update(agent.pv, pi_opt, sub, cfg.clip_eps, cfg.value_coef)
                dropped += stats["dropped"]
                p_losses.append(percep_update(agent.perception, p_opt, obs[ep], labels[ep], cfg.entropy_coef,
                                              cfg.entropy_final_only))
        guard.check(float(np.mean(p_losses)) if p_losses else 0.0)
        agent.iterations_done += 1
        row = _metrics_row(it, trajs, rewards, cfg.gamma, time.perf_counter() - start)
        row["policy_dropped"] = dropped
        rows.append(row)
        if writer:
            writer.append(row)
            timing.append(row)
        if log and it % 10 == 0:
            log(" ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
        if out_dir is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            agent.save(Path(out_dir) / f"agent_it{it + 1}.ckpt", config_hash)
    if out_dir is not None:
        agent.save(Path(out_dir) / "agent.ckpt", config_hash)
    agent.policy_dropped += dropped
    return rows


def _metrics_row(it: int, trajs: list[Trajectory], rewards: np.ndarray, gamma: float, wall: float) -> dict:
    final_ok = np.array([t.correct[-1] for t in trajs])
    patched = np.array([t.patch_id is not None for t in trajs])

    def acc(mask):
        return float(final_ok[mask].mean()) if mask.any() else float("nan")

    return {
        "iteration": it,
        "mean_return": float(discounted_sum(rewards, gamma).mean()),
        "clean_acc": acc(~patched),
        "patched_acc": acc(patched),
        "mean_final_loss": float(np.mean([t.losses[-1] for t in trajs])),
        "mean_entropy": float(np.mean([t.entropies[-1] for t in trajs])),
        "wallclock_s": round(wall, 3),
    }


class MetricsLog:
    """Append-only CSV with a fixed header."""

    def __init__(self, path: Path, columns: tuple[str, ...] = METRIC_COLUMNS):
        self.path = Path(path)
        self.columns = columns
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("w", newline="") as f:
            csv.writer(f).writerow(columns)

    def append(self, row: dict) -> None:
        with self.path.open("a", newline="") as f:
            csv.writer(f).writerow([_fmt(row[c]) for c in self.columns])


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def read_metrics(path) -> list[dict]:
    with Path(path).open() as f:
        return list(csv.DictReader(f))
