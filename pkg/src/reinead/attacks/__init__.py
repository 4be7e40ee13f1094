from .bank import PatchBank, noise_patch, oapa_build_bank
from .core import (
    MIM_DEFAULTS,
    PGD_DEFAULTS,
    AttackConfig,
    AttackResult,
    classifier_loss,
    eot_patch,
    fgsm_patch,
    mim_patch,
    perception_loss,
    pgd_patch,
    usp_adaptive_patch,
)

__all__ = [
    "PatchBank", "noise_patch", "oapa_build_bank", "MIM_DEFAULTS", "PGD_DEFAULTS", "AttackConfig",
    "AttackResult", "classifier_loss", "eot_patch", "fgsm_patch", "mim_patch", "perception_loss",
    "pgd_patch", "usp_adaptive_patch",
]
