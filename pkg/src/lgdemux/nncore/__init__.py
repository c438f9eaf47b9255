"""Minimal tensor/layer/training machinery for the calibration and classifier nets.

Everything is plain numpy: layers implement forward/backward pairs, a Network
wires them (including encoder-decoder skip connections), and the trainer runs
seeded mini-batch Adam/SGD with early stopping.  Checkpoints round-trip
bit-exactly through the LGDX container in `fileio`.
"""

from .layers import Tensor, ShapeError
from .network import Network, NetworkSpecError, calibration_net_spec, classifier_net_spec
from .train import (
    TrainConfig,
    TrainingDivergedError,
    batch_forward,
    bce_with_logits,
    classify,
    exact_match,
    sigmoid,
    train,
)
from .model import save_model, load_model

__all__ = [
    "Tensor",
    "ShapeError",
    "Network",
    "NetworkSpecError",
    "calibration_net_spec",
    "classifier_net_spec",
    "TrainConfig",
    "TrainingDivergedError",
    "batch_forward",
    "bce_with_logits",
    "classify",
    "exact_match",
    "sigmoid",
    "train",
    "save_model",
    "load_model",
]
