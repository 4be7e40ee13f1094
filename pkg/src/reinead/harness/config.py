"""Experiment configuration: typed TOML sections, fatal unknown keys, stable hash."""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..attacks import AttackConfig
from ..env import Bounds, CardEnv, Intrinsics
from ..trainer import BackboneConfig, TrainConfig

DEFAULT_CONFIG = Path(__file__).with_name("default.toml")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    out_dir: str = "runs/default"


@dataclass(frozen=True)
class DatasetSection:
    n_classes: int = 10
    per_class: int = 300
    heldout_per_class: int = 10
    texture_seed: int = 0
    texture_size: int = 32
    patch_area: float = 0.10

    def __post_init__(self):
        if self.n_classes < 2 or self.per_class < 1 or self.heldout_per_class < 1:
            raise ValueError("dataset needs >= 2 classes and >= 1 scene per class in each split")


@dataclass(frozen=True)
class EnvSection:
    resolution: int = 32
    focal: float = 35.0
    distance: float = 3.0
    h_min: float = -0.35
    h_max: float = 0.35
    v_min: float = -0.25
    v_max: float = 0.25
    supersample: int = 2

    def build(self) -> CardEnv:
        return CardEnv(Intrinsics.square(self.resolution, self.focal),
                       Bounds(self.h_min, self.h_max, self.v_min, self.v_max), self.distance,
                       supersample=self.supersample)


@dataclass(frozen=True)
class BankSection:
    size: int = 400
    noise_fraction: float = 0.1
    iterations: int = 30
    alpha: float = 8 / 255

    def attack(self) -> AttackConfig:
        return AttackConfig(iterations=self.iterations, alpha=self.alpha)


@dataclass(frozen=True)
class AttackSection:
    iterations: int = 30
    alpha: float = 8 / 255
    mu: float = 1.0
    eot_samples: int = 10
    target: int = -1  # -1 = untargeted
    init: str = "uniform"

    def build(self, seed: int) -> AttackConfig:
        return AttackConfig(self.iterations, self.alpha, self.mu, self.eot_samples,
                            None if self.target < 0 else self.target, seed, self.init)


@dataclass(frozen=True)
class EvalSection:
    horizon: int = 4
    n_episodes: int = 100
    attacks: tuple[str, ...] = ("pgd",)
    policy: str = "learned"
    deterministic: bool = True
    uniform_over_steps: bool = False
    attack_seed: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "attacks", tuple(self.attacks))
        unknown = set(self.attacks) - set(ATTACK_KINDS)
        if unknown:
            raise ValueError(f"unknown attack kinds {sorted(unknown)}; choose from {ATTACK_KINDS}")
        if self.policy not in ("learned", "random", "static"):
            raise ValueError(f"unknown eval policy {self.policy!r}")


ATTACK_KINDS = ("pgd", "fgsm", "mim", "eot", "usp", "bank")

SECTIONS = {
    "run": RunSection,
    "dataset": DatasetSection,
    "env": EnvSection,
    "backbone": BackboneConfig,
    "bank": BankSection,
    "attack": AttackSection,
    "train": TrainConfig,
    "eval": EvalSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    run: RunSection = field(default_factory=RunSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    env: EnvSection = field(default_factory=EnvSection)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    bank: BankSection = field(default_factory=BankSection)
    attack: AttackSection = field(default_factory=AttackSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        out = {name: asdict(getattr(self, name)) for name in SECTIONS}
        for name in SECTIONS:
            if name != "run":
                out[name].pop("seed", None)  # stages take the run seed
        return out

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def with_overrides(self, overrides: list[str]) -> "ExperimentConfig":
        data = self.to_dict()
        for item in overrides:
            key, sep, raw = item.partition("=")
            section, dot, name = key.strip().partition(".")
            if not sep or not dot:
                raise ConfigError(f"override {item!r} must look like section.key=value")
            if section not in data or name not in data[section] or (name == "seed" and section != "run"):
                raise ConfigError(f"unknown config key {key.strip()!r}")
            data[section][name] = _parse_value(raw.strip())
        return from_dict(data)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, run=replace(self.run, seed=seed))


def _parse_value(raw: str):
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw  # bare strings need no quotes on the command line


def _build(cls, values: dict, section: str):
    known = {f.name for f in fields(cls)}
    if section != "run":
        known.discard("seed")  # one run seed drives every stage
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{section}]: {exc}") from exc


def from_dict(data: dict) -> ExperimentConfig:
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    if "run" in data and "seed" not in data["run"]:
        raise ConfigError("[run] must set a seed")
    return ExperimentConfig(**{name: _build(cls, data.get(name, {}), name) for name, cls in SECTIONS.items()})


def load_config(path=None, overrides: list[str] | None = None) -> ExperimentConfig:
    path = DEFAULT_CONFIG if path is None else Path(path)
    try:
        data = tomllib.loads(Path(path).read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = from_dict(data)
    return cfg.with_overrides(overrides) if overrides else cfg
