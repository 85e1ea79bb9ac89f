"""Experiment orchestration: configuration, evaluation metrics and the runner."""
from .config import DEFAULTS, VARIANTS, ConfigError, ExperimentConfig, load_config, parse_overrides
from .evaluate import (
    DownstreamResult,
    Misclassification,
    eval_downstream,
    eval_identifiability,
    eval_prediction_accuracy,
    misclassification_estimate,
    sample_goal_task,
)
from .runner import MetricLog, MetricRow, RunResult, read_metrics, report, run
