"""The embodied agent (perception + policy/value) and its checkpoint format."""
from __future__ import annotations

import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .. import archive
from ..perception import PerceptionModel, PerceptionSpec, SingleViewClassifier
from ..policy import PolicyValue


class Agent:
    def __init__(self, spec: PerceptionSpec, caps: tuple[float, float], seed: int, std_fraction: float = 0.1):
        rng = np.random.default_rng([seed, 1])
        self.spec = spec
        self.caps = tuple(float(c) for c in caps)
        self.std_fraction = std_fraction
        self.perception = PerceptionModel(spec, rng)
        self.pv = PolicyValue(spec.d_b, self.caps, rng, std_fraction=std_fraction)
        self.pretrained = False
        self.iterations_done = 0
        self.policy_dropped = 0  # PPO elements skipped for non-finite ratios

    def init_encoder_from(self, backbone: SingleViewClassifier) -> None:
        """Start the perception encoder from a trained single-view backbone."""
        if backbone.spec.arch_hash() != self.spec.arch_hash():
            raise ValueError("backbone architecture does not match the perception spec")
        self.perception.encoder.load_state_dict(backbone.encoder.state_dict())

    def manifest(self) -> dict:
        return {
            "d_e": self.spec.d_e,
            "d_b": self.spec.d_b,
            "n_classes": self.spec.n_classes,
            "arch_hash": self.spec.arch_hash(),
        }

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"perception.{k}": v for k, v in self.perception.state_dict().items()}
        out.update({f"policy.{k}": v for k, v in self.pv.state_dict().items()})
        return out

    def save(self, path, config_hash: str = "") -> None:
        meta = {
            "kind": "agent",
            "spec": asdict(self.spec),
            "caps": list(self.caps),
            "std_fraction": self.std_fraction,
            "pretrained": self.pretrained,
            "iterations_done": self.iterations_done,
            "manifest": self.manifest(),
            "config_hash": config_hash,
        }
        archive.save(path, self.state_arrays(), meta)

    @classmethod
    def load(cls, path, config_hash: str | None = None) -> "Agent":
        arrays, meta = archive.load(path)
        if meta.get("kind") != "agent":
            raise archive.ArchiveError(f"{path} is not an agent checkpoint (kind={meta.get('kind')!r})")
        spec_d = dict(meta["spec"])
        spec_d["channels"] = tuple(spec_d["channels"])
        agent = cls(PerceptionSpec(**spec_d), tuple(meta["caps"]), seed=0, std_fraction=meta["std_fraction"])
        agent.perception.load_state_dict(_strip(arrays, "perception."))
        agent.pv.load_state_dict(_strip(arrays, "policy."))
        agent.pretrained = bool(meta["pretrained"])
        agent.iterations_done = int(meta["iterations_done"])
        _check_hash(path, meta, config_hash)
        return agent


def save_classifier(path, model: SingleViewClassifier, config_hash: str = "") -> None:
    meta = {"kind": "classifier", "spec": asdict(model.spec), "config_hash": config_hash,
            "manifest": {"d_e": model.spec.d_e, "n_classes": model.spec.n_classes,
                         "arch_hash": model.spec.arch_hash()}}
    archive.save(path, model.state_dict(), meta)


def load_classifier(path, config_hash: str | None = None) -> SingleViewClassifier:
    arrays, meta = archive.load(path)
    if meta.get("kind") != "classifier":
        raise archive.ArchiveError(f"{path} is not a classifier checkpoint (kind={meta.get('kind')!r})")
    spec_d = dict(meta["spec"])
    spec_d["channels"] = tuple(spec_d["channels"])
    model = SingleViewClassifier(PerceptionSpec(**spec_d), np.random.default_rng(0))
    model.load_state_dict(arrays)
    _check_hash(path, meta, config_hash)
    return model


def _strip(arrays: dict, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}


def _check_hash(path, meta: dict, config_hash: str | None) -> None:
    stored = meta.get("config_hash", "")
    if config_hash is not None and stored and stored != config_hash:
        warnings.warn(f"{Path(path).name}: checkpoint config hash {stored} differs from current {config_hash}",
                      UserWarning)
