from .infonce import InfoNCEReport, conditional_mi, gap_trend, infonce_lhs, random_joint, verify_infonce_bound
from .pomdp import (
    BudgetExceeded,
    DiscretePOMDP,
    EfficacyReport,
    accumulative_optimal,
    bayes_update,
    enumerate_posterior,
    greedy_action,
    greedy_rollout,
    observation_probs,
    posterior_entropy,
    random_pomdp,
    verify_efficacy_inequality,
)

__all__ = [
    "InfoNCEReport", "conditional_mi", "gap_trend", "infonce_lhs", "random_joint", "verify_infonce_bound", "BudgetExceeded",
    "DiscretePOMDP", "EfficacyReport", "accumulative_optimal", "bayes_update", "enumerate_posterior",
    "greedy_action", "greedy_rollout", "observation_probs", "posterior_entropy", "random_pomdp",
    "verify_efficacy_inequality",
]
