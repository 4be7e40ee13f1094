from .config import DEFAULT_CONFIG, ConfigError, ExperimentConfig, from_dict, load_config
from .evaluate import (
    AttackMetrics,
    EpisodeRecord,
    EvalReport,
    evaluate,
    evaluate_single_view,
    metrics_from_records,
    read_episodes,
    write_episodes,
)

__all__ = [
    "DEFAULT_CONFIG", "ConfigError", "ExperimentConfig", "from_dict", "load_config",
    "AttackMetrics", "EpisodeRecord", "EvalReport", "evaluate", "evaluate_single_view", "metrics_from_records",
    "read_episodes", "write_episodes",
]
