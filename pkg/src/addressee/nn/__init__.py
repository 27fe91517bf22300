"""Neural network: model definition, training, and weight persistence."""

from .model import (
    Model,
    ModelConfig,
    features_from_sequences,
    init_weights,
    nll_loss,
    normalize_pose,
    parameter_shapes,
    zero_weights,
)
from .train import TrainConfig, evaluate_loss, sequence_dataset, train
from .weights_io import load_weights, save_weights

__all__ = [
    "Model",
    "ModelConfig",
    "TrainConfig",
    "evaluate_loss",
    "features_from_sequences",
    "init_weights",
    "load_weights",
    "nll_loss",
    "normalize_pose",
    "parameter_shapes",
    "save_weights",
    "sequence_dataset",
    "train",
    "zero_weights",
]
