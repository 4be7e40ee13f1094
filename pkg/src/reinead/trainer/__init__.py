from .agent import Agent, load_classifier, save_classifier
from .loops import (
    METRIC_COLUMNS,
    BackboneConfig,
    MetricsLog,
    TrainConfig,
    TrainingDiverged,
    classifier_accuracy,
    offline_pretrain,
    online_train,
    plan_episodes,
    read_metrics,
    train_backbone,
)
from .returns import RewardMode, compute_rewards, discounted_sum, estimate_advantages, normalize_advantages
from .rollout import Trajectory, rollout
from .updates import PolicyBatch, clip_objective, perception_objective, percep_update, ppo_update, value_loss

__all__ = [
    "Agent", "load_classifier", "save_classifier", "METRIC_COLUMNS", "BackboneConfig", "MetricsLog",
    "TrainConfig", "TrainingDiverged", "classifier_accuracy", "offline_pretrain", "online_train",
    "plan_episodes", "read_metrics", "train_backbone", "RewardMode", "compute_rewards", "discounted_sum",
    "estimate_advantages", "normalize_advantages", "Trajectory", "rollout", "PolicyBatch", "clip_objective",
    "perception_objective", "percep_update", "ppo_update", "value_loss",
]
