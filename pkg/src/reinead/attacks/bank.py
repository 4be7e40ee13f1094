"""Offline adversarial patch bank (OAPA) and the training-time patch sampler."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .. import archive
from ..env import CardEnv, Scene
from .core import AttackConfig, LossFn, PGD_DEFAULTS, pgd_patch


@dataclass
class PatchBank:
    patches: list[np.ndarray] = field(default_factory=list)
    provenance: list[dict] = field(default_factory=list)
    patch_shape: tuple[int, int, int] | None = None

    def __post_init__(self):
        if len(self.patches) != len(self.provenance):
            raise ValueError("every patch needs a provenance record")
        for i, p in enumerate(self.patches):
            if p.min() < 0 or p.max() > 1:
                raise ValueError(f"patch {i} leaves [0, 1]")
        if self.patches and self.patch_shape is None:
            self.patch_shape = tuple(self.patches[0].shape)

    def __len__(self) -> int:
        return len(self.patches)

    def sample(self, rng: np.random.Generator, shape: tuple[int, int, int]) -> tuple[np.ndarray, int]:
        """A uniformly drawn bank patch, or a fresh noise patch (index -1) when the bank is empty."""
        if not self.patches:
            return noise_patch(shape, rng), -1
        i = int(rng.integers(len(self.patches)))
        return self.patches[i], i

    def save(self, path) -> None:
        shape = self.patch_shape or (0, 0, 3)
        stacked = np.stack(self.patches) if self.patches else np.zeros((0,) + tuple(shape), dtype=np.float32)
        archive.save(path, {"patches": stacked},
                     {"kind": "patch_bank", "provenance": self.provenance, "patch_shape": list(shape)})

    @classmethod
    def load(cls, path) -> "PatchBank":
        arrays, meta = archive.load(path)
        if meta.get("kind") != "patch_bank":
            raise archive.ArchiveError(f"{path} is not a patch bank (kind={meta.get('kind')!r})")
        patches = [p for p in arrays["patches"]]
        return cls(patches, list(meta["provenance"]), tuple(meta["patch_shape"]))


def noise_patch(shape, rng: np.random.Generator, std: float = 0.2) -> np.ndarray:
    return np.clip(0.5 + std * rng.standard_normal(shape), 0.0, 1.0).astype(np.float32)


def oapa_build_bank(scenes: list[Scene], backbone_loss: LossFn, env: CardEnv, bank_size: int,
                    cfg: AttackConfig = PGD_DEFAULTS, noise_fraction: float = 0.1) -> PatchBank:
    """PGD patches against the single-view backbone, scenes taken round-robin.

    A ``noise_fraction`` share of the slots holds Gaussian-noise patches. Each
    patch's attack seed is derived from ``(cfg.seed, slot)``, so rebuilding is
    bit-identical.
    """
    if not scenes:
        raise ValueError("cannot build a patch bank from an empty dataset")
    n_noise = int(round(noise_fraction * bank_size))
    noise_slots = set(np.linspace(0, bank_size - 1, n_noise).round().astype(int).tolist()) if n_noise else set()
    patches, prov = [], []
    for slot in range(bank_size):
        scene = scenes[slot % len(scenes)]
        seed = int(np.random.SeedSequence([cfg.seed, slot]).generate_state(1)[0])
        if slot in noise_slots:
            patches.append(noise_patch(scene.patch_shape, np.random.default_rng(seed)))
            prov.append({"kind": "gaussian_noise", "seed": seed, "scene": slot % len(scenes)})
            continue
        c = replace(cfg, seed=seed)
        patches.append(pgd_patch(scene, backbone_loss, env, c).patch)
        prov.append({"kind": "pgd", "config_hash": c.config_hash(), "seed": seed, "scene": slot % len(scenes)})
    return PatchBank(patches, prov, scenes[0].patch_shape)
