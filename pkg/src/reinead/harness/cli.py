"""``reinead`` command line: dataset, training stages, attacks, evaluation, oracle checks."""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from .. import archive
from ..attacks import PatchBank
from ..env import load_scenes, save_scenes, write_png
from ..oracles import random_joint, verify_efficacy_inequality, verify_infonce_bound
from ..trainer import Agent, TrainingDiverged, classifier_accuracy, load_classifier, rollout, save_classifier
from . import pipeline
from .config import ConfigError, ExperimentConfig, load_config

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def _log(msg: str) -> None:
    print(f"[{time.strftime('%H:%M:%S')}] {msg}", flush=True)


class Context:
    """Resolved config, output paths and lazily loaded artifacts for one invocation."""

    def __init__(self, args):
        cfg = load_config(args.config, args.override)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        self.cfg: ExperimentConfig = cfg
        self.paths = pipeline.out_paths(cfg, args.out)
        self.paths["root"].mkdir(parents=True, exist_ok=True)
        self.env = cfg.env.build()
        self.checkpoint = getattr(args, "checkpoint", None)

    def scenes(self):
        p = self.paths
        if p["train_scenes"].exists() and p["heldout_scenes"].exists():
            return load_scenes(p["train_scenes"]), load_scenes(p["heldout_scenes"])
        train, heldout = pipeline.datasets(self.cfg)
        save_scenes(p["train_scenes"], train, {"split": 0})
        save_scenes(p["heldout_scenes"], heldout, {"split": 1})
        return train, heldout

    def backbone(self, train=None, required: bool = False):
        path = self.paths["backbone"]
        if path.exists():
            return load_classifier(path)
        if required:
            raise FileNotFoundError(f"no backbone at {path}; run train-offline first")
        if train is None:
            train, _ = self.scenes()
        model = pipeline.fit_backbone(self.cfg, train, self.env, _log)
        save_classifier(path, model)
        _log(f"backbone held-out accuracy {classifier_accuracy(model, self.env, self.scenes()[1], self.cfg.run.seed):.3f}")
        return model

    def bank(self, train=None, backbone=None):
        path = self.paths["bank"]
        if path.exists():
            return PatchBank.load(path)
        train = train if train is not None else self.scenes()[0]
        backbone = backbone if backbone is not None else self.backbone(train)
        bank = pipeline.build_bank(self.cfg, train, backbone, self.env)
        bank.save(path)
        _log(f"patch bank of {len(bank)} written to {path}")
        return bank

    def agent(self, default_key: str) -> Agent:
        path = Path(self.checkpoint) if self.checkpoint else self.paths[default_key]
        return Agent.load(path, self.cfg.config_hash())


def cmd_gen_dataset(ctx: Context, args) -> int:
    train, heldout = ctx.scenes()
    _log(f"{len(train)} training and {len(heldout)} held-out scenes in {ctx.paths['root']}")
    return EXIT_OK


def cmd_train_offline(ctx: Context, args) -> int:
    train, _ = ctx.scenes()
    backbone = ctx.backbone(train)
    bank = ctx.bank(train, backbone)
    agent = pipeline.pretrain_agent(ctx.cfg, train, bank, ctx.env, backbone, _log, out_dir=ctx.paths["root"])
    agent.save(ctx.paths["offline"], ctx.cfg.config_hash())
    _log(f"offline agent written to {ctx.paths['offline']}")
    return EXIT_OK


def cmd_build_patch_bank(ctx: Context, args) -> int:
    train, _ = ctx.scenes()
    if ctx.checkpoint:
        backbone = load_classifier(ctx.checkpoint)
    else:
        backbone = ctx.backbone(train, required=True)
    if ctx.paths["bank"].exists():
        ctx.paths["bank"].unlink()
    ctx.bank(train, backbone)
    return EXIT_OK


def cmd_train_online(ctx: Context, args) -> int:
    train, _ = ctx.scenes()
    bank = ctx.bank(train)
    if args.scratch:
        agent = pipeline.scratch_agent(ctx.cfg, ctx.env)
    else:
        agent = ctx.agent("offline")
    rows = pipeline.train_agent_online(ctx.cfg, agent, train, bank, ctx.env, out_dir=ctx.paths["online_dir"],
                                       allow_scratch=args.scratch, log=_log)
    _log(f"{len(rows)} online iterations; metrics in {ctx.paths['online_dir'] / 'metrics.csv'}")
    return EXIT_OK


def cmd_attack(ctx: Context, args) -> int:
    _, heldout = ctx.scenes()
    agent = ctx.agent("agent")
    scene = heldout[args.scene % len(heldout)]
    backbone = load_classifier(ctx.paths["backbone"]) if args.kind != "usp" and ctx.paths["backbone"].exists() \
        and args.against == "backbone" else None
    seed = ctx.cfg.eval.attack_seed
    patch = pipeline.make_patch(args.kind, scene, ctx.cfg, ctx.env, seed, backbone, agent)
    out = ctx.paths["root"] / "attack"
    out.mkdir(parents=True, exist_ok=True)
    archive.save(out / f"patch_{args.kind}_{args.scene}.bin", {"patch": patch},
                 {"kind": "patch", "attack": args.kind, "scene": args.scene, "seed": seed})
    write_png(out / f"patch_{args.kind}_{args.scene}.png", patch)
    h = ctx.cfg.eval.horizon
    for name, p in (("clean", None), ("patched", patch)):
        t = rollout(agent, ctx.env, [scene], [p], [ctx.cfg.run.seed], h, deterministic=True)[0]
        print(f"{name:8s} final loss {t.losses[-1]:.4f} correct {bool(t.correct[-1])}")
    return EXIT_OK


def cmd_evaluate(ctx: Context, args) -> int:
    _, heldout = ctx.scenes()
    agent = ctx.agent("agent")
    backbone = ctx.backbone(required=True) if ctx.paths["backbone"].exists() else None
    bank = PatchBank.load(ctx.paths["bank"]) if ctx.paths["bank"].exists() else None
    patch_sets = pipeline.eval_patch_sets(ctx.cfg, heldout, ctx.env, backbone, agent, bank)
    meta = {"checkpoint": str(args.checkpoint),
            "checkpoint_sha256": hashlib.sha256(Path(args.checkpoint).read_bytes()).hexdigest()[:16]}
    report = pipeline.evaluate_agent(ctx.cfg, agent, heldout, ctx.env, patch_sets, metadata=meta)
    report.save(ctx.paths["eval_dir"])
    rows = [("agent", report)]
    if backbone is not None:
        base = pipeline.evaluate_baseline(ctx.cfg, backbone, heldout, ctx.env, patch_sets)
        base.save(ctx.paths["eval_dir"] / "baseline")
        rows.append(("baseline", base))
    print(f"{'model':10s} {'attack':6s} {'std acc %':>9s} {'ASR %':>7s}  final loss")
    for who, rep in rows:
        for name, m in rep.attacks.items():
            asr = "undef" if m.asr is None else f"{m.asr:.1f}"
            print(f"{who:10s} {name:6s} {m.standard_accuracy:9.1f} {asr:>7s}  {m.loss_curve[-1]:.4f}")
    _log(f"report in {ctx.paths['eval_dir'] / 'eval_report.json'}")
    return EXIT_OK


def cmd_verify_oracles(ctx: Context, args) -> int:
    eff = verify_efficacy_inequality(args.instances, seed=ctx.cfg.run.seed)
    rng = np.random.default_rng(ctx.cfg.run.seed)
    reports = [verify_infonce_bound(random_joint(rng), K=32, n_batches=200, seed=ctx.cfg.run.seed + i)
               for i in range(args.joints)]
    mi_fail = sum(not r.mi_ok for r in reports)
    stated_fail = sum(not r.stated_ok for r in reports)
    print(f"{'check':34s} {'cases':>6s} {'failures':>8s}")
    print(f"{'greedy <= horizon-optimal gain':34s} {eff.n_instances:6d} {len(eff.violations):8d}"
          f"   strict gaps {eff.strict_gaps}, max {eff.max_gap:.4f}")
    print(f"{'contrastive estimate <= I':34s} {len(reports):6d} {mi_fail:8d}")
    print(f"{'contrastive estimate <= I - logK/K':34s} {len(reports):6d} {stated_fail:8d}   (informational)")
    if eff.violations:
        path = ctx.paths["root"] / "efficacy_violations.json"
        path.write_text(json.dumps(eff.violations))
        print(f"offending instances written to {path}")
    return EXIT_FAILURE if eff.violations or mi_fail else EXIT_OK


def cmd_render_debug(ctx: Context, args) -> int:
    _, heldout = ctx.scenes()
    scene = heldout[args.scene % len(heldout)]
    if ctx.checkpoint:
        agent, policy = Agent.load(ctx.checkpoint, ctx.cfg.config_hash()), "learned"
    else:
        agent, policy = pipeline.scratch_agent(ctx.cfg, ctx.env), "random"
    patch = None
    if args.bank_patch is not None:
        patch = PatchBank.load(ctx.paths["bank"]).patches[args.bank_patch]
    t = rollout(agent, ctx.env, [scene], [patch], [ctx.cfg.run.seed], ctx.cfg.eval.horizon, policy=policy,
                deterministic=True)[0]
    out = ctx.paths["root"] / "renders"
    out.mkdir(parents=True, exist_ok=True)
    for k, (obs, s) in enumerate(zip(t.observations, t.states)):
        write_png(out / f"scene{args.scene}_step{k}.png", obs)
        print(f"step {k}: h={s[0]:+.3f} v={s[1]:+.3f} loss={t.losses[k]:.4f}")
    return EXIT_OK


COMMANDS = {
    "gen-dataset": (cmd_gen_dataset, "write the procedural training and held-out scenes"),
    "train-offline": (cmd_train_offline, "train the backbone, build the patch bank, pretrain perception"),
    "build-patch-bank": (cmd_build_patch_bank, "(re)build the offline patch bank from a backbone"),
    "train-online": (cmd_train_online, "joint policy and perception training"),
    "attack": (cmd_attack, "craft one patch against a checkpoint"),
    "evaluate": (cmd_evaluate, "paired clean/patched evaluation of a checkpoint"),
    "verify-oracles": (cmd_verify_oracles, "exact-belief and contrastive-bound oracle suites"),
    "render-debug": (cmd_render_debug, "dump the views along one trajectory as PNGs"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reinead", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None, help="TOML config (default: the shipped one)")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
        p.add_argument("--out", type=Path, default=None, help="override [run] out_dir")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="section.key=value, repeatable")
        p.add_argument("--checkpoint", type=Path, required=(name == "evaluate"), default=None)
        if name == "train-online":
            p.add_argument("--scratch", action="store_true", help="start from random weights, skip pretraining")
        if name in ("attack", "render-debug"):
            p.add_argument("--scene", type=int, default=0, help="held-out scene index")
        if name == "attack":
            p.add_argument("--kind", default="usp", choices=["pgd", "fgsm", "mim", "eot", "usp"])
            p.add_argument("--against", default="agent", choices=["agent", "backbone"])
        if name == "render-debug":
            p.add_argument("--bank-patch", type=int, default=None, help="apply this bank patch")
        if name == "verify-oracles":
            p.add_argument("--instances", type=int, default=1000)
            p.add_argument("--joints", type=int, default=20)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    fn, _ = COMMANDS[args.command]
    try:
        ctx = Context(args)
        return fn(ctx, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (archive.ArchiveError, FileNotFoundError, ValueError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
