"""Public package exports for bigat-forecaster."""

import logging

__version__ = "0.1.0"

logging.getLogger("bigat").addHandler(logging.NullHandler())  # library use never prints

from .errors import (  # noqa: E402
    BigatError,
    CheckpointError,
    ConfigError,
    ContractError,
    DatasetFetchError,
    DeterminismError,
    DimensionError,
    GridFormatError,
    NumericError,
    TrackParseError,
)
from .evaluation import MetricResult, ade, evaluate_best_of_k, fde, latent_sweep, linear_baseline  # noqa: E402
from .model import BigatModel, ModelConfig, PredictedScene  # noqa: E402
from .scene import FeatureGrid, SceneSample, TrajectoryWindow  # noqa: E402
from .training import LossReport, LossWeights, OptimizerConfig, fit, train_step  # noqa: E402

__all__ = [
    "BigatModel",
    "ModelConfig",
    "PredictedScene",
    "SceneSample",
    "TrajectoryWindow",
    "FeatureGrid",
    "LossWeights",
    "LossReport",
    "OptimizerConfig",
    "train_step",
    "fit",
    "MetricResult",
    "ade",
    "fde",
    "evaluate_best_of_k",
    "linear_baseline",
    "latent_sweep",
    "BigatError",
    "DimensionError",
    "NumericError",
    "ContractError",
    "DeterminismError",
    "TrackParseError",
    "GridFormatError",
    "CheckpointError",
    "ConfigError",
    "DatasetFetchError",
]
