"""Spatio-temporal MLP for skeleton-based gesture recognition, in numpy."""

from .model import ModelConfig, ModelParams, backward, forward, init_params, parameter_count
from .data import SkeletonSequence, load_dataset, save_dataset, synth_gestures, synth_stream
from .metrics import ConfusionMatrix

__version__ = "0.1.0"

__all__ = [
    "ConfusionMatrix",
    "ModelConfig",
    "ModelParams",
    "SkeletonSequence",
    "backward",
    "forward",
    "init_params",
    "load_dataset",
    "parameter_count",
    "save_dataset",
    "synth_gestures",
    "synth_stream",
]
