"""Transfer-learning training with conflict-aware descent directions."""

from .direction import DirectionResult, angle_deg, decompose, estimate_direction
from .net import LayerSpec, NetworkSpec, init_params
from .reg import RegularizerConfig, lambda_at_epoch, reg_value_and_grad
from .trainer import TrainConfig, learning_rate, train

__all__ = [
    "DirectionResult",
    "LayerSpec",
    "NetworkSpec",
    "RegularizerConfig",
    "TrainConfig",
    "angle_deg",
    "decompose",
    "estimate_direction",
    "init_params",
    "lambda_at_epoch",
    "learning_rate",
    "reg_value_and_grad",
    "train",
]
__version__ = "0.1.0"
