"""Fingerprint liveness detection: a whole-image DenseNet and an attended patch
DenseNet fused by learned patch weights, built on a small numpy autodiff engine."""

from .model import DeFraudNetConfig, DeFraudNetModel, build_model, desk_config, full_config
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

__all__ = [
    "DeFraudNetConfig",
    "DeFraudNetModel",
    "TrainConfig",
    "build_model",
    "desk_config",
    "full_config",
    "load_checkpoint",
    "save_checkpoint",
    "train",
]
__version__ = "0.1.0"
