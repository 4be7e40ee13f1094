"""Experiment stages shared by the CLI and the acceptance suite.

Every stage takes the experiment config and derives all of its randomness
from ``cfg.run.seed``.
"""
from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np

from ..attacks import (
    PatchBank,
    classifier_loss,
    eot_patch,
    fgsm_patch,
    mim_patch,
    oapa_build_bank,
    perception_loss,
    pgd_patch,
    usp_adaptive_patch,
)
from ..env import CardEnv, Scene, make_scene_dataset
from ..perception import PerceptionSpec
from ..trainer import Agent, BackboneConfig, TrainConfig, offline_pretrain, online_train, train_backbone
from .config import ExperimentConfig
from .evaluate import EvalReport, episode_plan, evaluate, evaluate_single_view


def datasets(cfg: ExperimentConfig) -> tuple[list[Scene], list[Scene]]:
    d = cfg.dataset
    make = lambda n, split: make_scene_dataset(d.n_classes, n, d.texture_seed, d.texture_size, d.patch_area, split)
    return make(d.per_class, 0), make(d.heldout_per_class, 1)


def perception_spec(cfg: ExperimentConfig) -> PerceptionSpec:
    return PerceptionSpec(cfg.dataset.n_classes, cfg.env.resolution)


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    return replace(cfg.train, seed=cfg.run.seed)


def backbone_config(cfg: ExperimentConfig) -> BackboneConfig:
    return replace(cfg.backbone, seed=cfg.run.seed)


def fit_backbone(cfg: ExperimentConfig, train: list[Scene], env: CardEnv, log=None):
    return train_backbone(train, env, perception_spec(cfg), backbone_config(cfg), log)


def build_bank(cfg: ExperimentConfig, train: list[Scene], backbone, env: CardEnv) -> PatchBank:
    attack = replace(cfg.bank.attack(), seed=cfg.run.seed)
    return oapa_build_bank(train, classifier_loss(backbone), env, cfg.bank.size, attack, cfg.bank.noise_fraction)


def pretrain_agent(cfg: ExperimentConfig, train: list[Scene], bank: PatchBank, env: CardEnv, backbone=None,
                   log=None, out_dir=None) -> Agent:
    """Offline phase: the encoder starts from the backbone when one is given."""
    agent = Agent(perception_spec(cfg), env.caps, seed=cfg.run.seed)
    if backbone is not None:
        agent.init_encoder_from(backbone)
    offline_pretrain(agent, env, train, bank, train_config(cfg), log, out_dir=out_dir)
    return agent


def scratch_agent(cfg: ExperimentConfig, env: CardEnv) -> Agent:
    return Agent(perception_spec(cfg), env.caps, seed=cfg.run.seed)


def train_agent_online(cfg: ExperimentConfig, agent: Agent, train: list[Scene], bank: PatchBank, env: CardEnv,
                       out_dir=None, allow_scratch: bool = False, log=None, iterations: int | None = None) -> list[dict]:
    tc = train_config(cfg)
    if iterations is not None:
        tc = replace(tc, iterations=iterations)
    return online_train(agent, env, train, bank, tc, out_dir=out_dir, allow_scratch=allow_scratch,
                        config_hash=cfg.config_hash(), log=log)


def make_patch(kind: str, scene: Scene, cfg: ExperimentConfig, env: CardEnv, seed: int, backbone=None,
               agent: Agent | None = None, horizon: int | None = None) -> np.ndarray:
    """One attack patch; view attacks hit the backbone when given, else the agent's single-step loss."""
    attack = cfg.attack.build(seed)
    if kind == "usp":
        if agent is None:
            raise ValueError("the adaptive attack needs a defended agent")
        h = cfg.eval.horizon if horizon is None else horizon
        return usp_adaptive_patch(scene, agent.perception, env, h, attack).patch
    fns = {"pgd": pgd_patch, "fgsm": fgsm_patch, "mim": mim_patch, "eot": eot_patch}
    if kind not in fns:
        raise ValueError(f"unknown attack kind {kind!r}")
    if backbone is not None:
        loss = classifier_loss(backbone)
    elif agent is not None:
        loss = perception_loss(agent.perception)
    else:
        raise ValueError("an attack needs a backbone or an agent")
    return fns[kind](scene, loss, env, attack).patch


def eval_patch_sets(cfg: ExperimentConfig, scenes: list[Scene], env: CardEnv, backbone=None, agent=None,
                    bank: PatchBank | None = None, n_episodes: int | None = None) -> dict[str, list[np.ndarray]]:
    """Per-episode patches for each configured attack, seeded ``attack_seed + episode``."""
    n = cfg.eval.n_episodes if n_episodes is None else n_episodes
    idx, _ = episode_plan(scenes, n, cfg.run.seed)
    out = {}
    for kind in cfg.eval.attacks:
        patches = []
        for e in range(n):
            seed = cfg.eval.attack_seed + e
            if kind == "bank":
                if bank is None:
                    raise ValueError("the bank attack needs a patch bank")
                patches.append(bank.sample(np.random.default_rng(seed), scenes[idx[e]].patch_shape)[0])
            else:
                patches.append(make_patch(kind, scenes[idx[e]], cfg, env, seed, backbone, agent))
        out[kind] = patches
    return out


def evaluate_agent(cfg: ExperimentConfig, agent: Agent, scenes: list[Scene], env: CardEnv,
                   patch_sets: dict[str, list[np.ndarray]], n_episodes: int | None = None,
                   metadata: dict | None = None) -> EvalReport:
    e = cfg.eval
    n = e.n_episodes if n_episodes is None else n_episodes
    meta = {"config_hash": cfg.config_hash(), "attack_seed": e.attack_seed, **(metadata or {})}
    return evaluate(agent, env, scenes, patch_sets, e.horizon, n, cfg.run.seed, e.policy, e.deterministic,
                    e.uniform_over_steps, meta)


def evaluate_baseline(cfg: ExperimentConfig, backbone, scenes: list[Scene], env: CardEnv,
                      patch_sets: dict[str, list[np.ndarray]], n_episodes: int | None = None) -> EvalReport:
    n = cfg.eval.n_episodes if n_episodes is None else n_episodes
    return evaluate_single_view(backbone, env, scenes, patch_sets, n, cfg.run.seed,
                                {"config_hash": cfg.config_hash(), "attack_seed": cfg.eval.attack_seed})


def out_paths(cfg: ExperimentConfig, out_dir=None) -> dict[str, Path]:
    root = Path(cfg.run.out_dir if out_dir is None else out_dir)
    return {
        "root": root,
        "train_scenes": root / "scenes_train.bin",
        "heldout_scenes": root / "scenes_heldout.bin",
        "backbone": root / "backbone.ckpt",
        "bank": root / "bank.bin",
        "offline": root / "agent_offline.ckpt",
        "online_dir": root / "online",
        "agent": root / "online" / "agent.ckpt",
        "eval_dir": root / "eval",
    }
