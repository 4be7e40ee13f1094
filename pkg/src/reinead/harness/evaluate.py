"""Paired clean/patched evaluation: standard accuracy, attack success rate, per-step curves."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff import Tensor, no_grad, ops
from ..env import CardEnv, Scene
from ..trainer import Agent, rollout


@dataclass
class EpisodeRecord:
    attack: str
    episode: int
    scene: int
    label: int
    seed: int
    clean_pred: int
    pred: int
    losses: list[float]  # per step, patched episode
    correct: list[bool]  # per step, patched episode
    entropies: list[float]

    @property
    def clean_correct(self) -> bool:
        return self.clean_pred == self.label

    @property
    def patched_correct(self) -> bool:
        return self.pred == self.label


@dataclass
class AttackMetrics:
    standard_accuracy: float  # %
    patched_accuracy: float  # %
    asr: float | None  # %, None when no clean episode was correct
    loss_curve: list[float]
    accuracy_curve: list[float]  # %
    entropy_curve: list[float]
    n_episodes: int
    n_eligible: int


@dataclass
class EvalReport:
    attacks: dict[str, AttackMetrics]
    clean_loss_curve: list[float]
    clean_accuracy_curve: list[float]
    horizon: int
    metadata: dict = field(default_factory=dict)
    records: list[EpisodeRecord] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "metadata": self.metadata,
            "clean_loss_curve": self.clean_loss_curve,
            "clean_accuracy_curve": self.clean_accuracy_curve,
            "attacks": {k: asdict(v) for k, v in self.attacks.items()},
        }

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval_report.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        write_episodes(out / "episodes.csv", self.records)


def metrics_from_records(records: list[EpisodeRecord]) -> AttackMetrics:
    """Aggregates for one attack, recomputable from the dumped per-episode rows."""
    clean_ok = np.array([r.clean_correct for r in records])
    patched_ok = np.array([r.patched_correct for r in records])
    eligible = int(clean_ok.sum())
    asr = 100.0 * float((clean_ok & ~patched_ok).sum()) / eligible if eligible else None
    return AttackMetrics(
        standard_accuracy=100.0 * float(clean_ok.mean()),
        patched_accuracy=100.0 * float(patched_ok.mean()),
        asr=asr,
        loss_curve=np.mean([r.losses for r in records], axis=0).tolist(),
        accuracy_curve=(100.0 * np.mean([r.correct for r in records], axis=0)).tolist(),
        entropy_curve=np.mean([r.entropies for r in records], axis=0).tolist(),
        n_episodes=len(records),
        n_eligible=eligible,
    )


EPISODE_COLUMNS = ("attack", "episode", "scene", "label", "seed", "clean_pred", "pred", "losses", "correct",
                   "entropies")


def write_episodes(path, records: list[EpisodeRecord]) -> None:
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(EPISODE_COLUMNS)
        for r in records:
            w.writerow([r.attack, r.episode, r.scene, r.label, r.seed, r.clean_pred, r.pred,
                        " ".join(repr(float(x)) for x in r.losses), " ".join(str(int(x)) for x in r.correct),
                        " ".join(repr(float(x)) for x in r.entropies)])


def read_episodes(path) -> list[EpisodeRecord]:
    out = []
    with Path(path).open() as f:
        for row in csv.DictReader(f):
            out.append(EpisodeRecord(row["attack"], int(row["episode"]), int(row["scene"]), int(row["label"]),
                                     int(row["seed"]), int(row["clean_pred"]), int(row["pred"]),
                                     [float(x) for x in row["losses"].split()],
                                     [bool(int(x)) for x in row["correct"].split()],
                                     [float(x) for x in row["entropies"].split()]))
    return out


def _answer(logits: list[np.ndarray], uniform_over_steps: bool) -> int:
    if not uniform_over_steps:
        return int(np.argmax(logits[-1]))
    z = np.stack(logits)
    p = np.exp(z - z.max(-1, keepdims=True))
    p /= p.sum(-1, keepdims=True)
    return int(np.argmax(p.mean(0)))


def episode_plan(scenes: list[Scene], n_episodes: int, seed: int) -> tuple[list[int], list[int]]:
    """Episode ``i`` sees scene ``i mod len(scenes)`` with episode seed ``seed + i``."""
    idx = [i % len(scenes) for i in range(n_episodes)]
    return idx, [seed + i for i in range(n_episodes)]


def evaluate(agent: Agent, env: CardEnv, scenes: list[Scene], patch_sets: dict[str, list[np.ndarray]],
             horizon: int, n_episodes: int, seed: int, policy: str = "learned", deterministic: bool = True,
             uniform_over_steps: bool = False, metadata: dict | None = None) -> EvalReport:
    """Paired rollouts of the agent: the clean and patched episode share scene and seed.

    ``patch_sets[name][i]`` is the patch of episode ``i``.
    """
    idx, seeds = episode_plan(scenes, n_episodes, seed)
    ep_scenes = [scenes[i] for i in idx]

    def run(patches):
        return rollout(agent, env, ep_scenes, patches, seeds, horizon, policy=policy, deterministic=deterministic)

    clean = run([None] * n_episodes)
    clean_preds = [_answer(t.logits, uniform_over_steps) for t in clean]
    records, metrics = [], {}
    for name, patches in patch_sets.items():
        if len(patches) != n_episodes:
            raise ValueError(f"attack {name!r} has {len(patches)} patches for {n_episodes} episodes")
        recs = [EpisodeRecord(name, e, idx[e], t.label, seeds[e], clean_preds[e], _answer(t.logits, uniform_over_steps),
                              [float(x) for x in t.losses], [bool(x) for x in t.correct],
                              [float(x) for x in t.entropies])
                for e, t in enumerate(run(patches))]
        metrics[name] = metrics_from_records(recs)
        records += recs
    return EvalReport(
        attacks=metrics,
        clean_loss_curve=np.mean([t.losses for t in clean], axis=0).tolist(),
        clean_accuracy_curve=(100.0 * np.mean([t.correct for t in clean], axis=0)).tolist(),
        horizon=horizon,
        metadata={"seed": seed, "n_episodes": n_episodes, "policy": policy, **(metadata or {})},
        records=records,
    )


def evaluate_single_view(classifier, env: CardEnv, scenes: list[Scene], patch_sets: dict[str, list[np.ndarray]],
                         n_episodes: int, seed: int, metadata: dict | None = None) -> EvalReport:
    """The undefended baseline: one observation from the episode's initial camera state."""
    idx, seeds = episode_plan(scenes, n_episodes, seed)
    states = [env.initial_state(np.random.default_rng(s)) for s in seeds]

    def predict(patches):
        out = []
        with no_grad():
            for e in range(n_episodes):
                sc = scenes[idx[e]]
                p = patches[e]
                img = env.render(sc, states[e], None if p is None else Tensor(p)).image
                logits = classifier(ops.stack([img]))
                loss = ops.cross_entropy(logits, np.array([sc.label])).item()
                out.append((int(np.argmax(logits.data[0])), loss, ops.entropy(logits).data.item()))
        return out

    clean = predict([None] * n_episodes)
    records, metrics = [], {}
    for name, patches in patch_sets.items():
        recs = []
        for e, (pred, loss, ent) in enumerate(predict(patches)):
            label = scenes[idx[e]].label
            recs.append(EpisodeRecord(name, e, idx[e], label, seeds[e], clean[e][0], pred, [loss], [pred == label],
                                      [ent]))
        metrics[name] = metrics_from_records(recs)
        records += recs
    return EvalReport(
        attacks=metrics,
        clean_loss_curve=[float(np.mean([c[1] for c in clean]))],
        clean_accuracy_curve=[100.0 * float(np.mean([c[0] == scenes[idx[e]].label for e, c in enumerate(clean)]))],
        horizon=0,
        metadata={"seed": seed, "n_episodes": n_episodes, "policy": "static single view", **(metadata or {})},
        records=records,
    )
