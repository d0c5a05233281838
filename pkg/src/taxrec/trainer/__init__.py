"""BPR training of the taxonomy-aware factor model."""

from .config import PRESETS, ModelConfig, preset
from .crossval import best_point, cross_validate, default_grid, score_grid
from .gradients import GradientScratch, apply_updates, compute_gradients, sigmoid, tuple_objective
from .training import EpochStats, TrainResult, train, train_parallel

__all__ = [
    "EpochStats",
    "GradientScratch",
    "ModelConfig",
    "PRESETS",
    "TrainResult",
    "apply_updates",
    "best_point",
    "cross_validate",
    "default_grid",
    "score_grid",
    "compute_gradients",
    "preset",
    "sigmoid",
    "train",
    "train_parallel",
    "tuple_objective",
]
