"""Experiment harness: configs, training/eval loops, CLI, acceptance suites."""

from .config import (
    AcpSettings,
    ConfigError,
    EvalSettings,
    ExperimentConfig,
    FeSettings,
    load_config,
    parse_config,
    save_config,
    serialize_config,
)
from .run import (
    canonical_records,
    evaluate,
    load_checkpoint,
    pretrain_fe,
    run_episode,
    save_checkpoint,
    train,
)

__all__ = [
    "AcpSettings",
    "ConfigError",
    "EvalSettings",
    "ExperimentConfig",
    "FeSettings",
    "canonical_records",
    "evaluate",
    "load_checkpoint",
    "load_config",
    "parse_config",
    "pretrain_fe",
    "run_episode",
    "save_checkpoint",
    "save_config",
    "serialize_config",
    "train",
]
