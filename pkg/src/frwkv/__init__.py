"""Frequency-space RWKV forecaster with periodic position context and selective
cross-branch gating, plus its ablation family, on a small numpy autodiff core."""
from ._accel import backend
from .errors import (ConfigError, ContractError, DegenerateScaleError, DivergenceError,
                     FrwkvError, IncompleteGridError, ProtocolError, ShapeError)
from .model import Forecaster, ModelConfig, count_parameters, load_checkpoint, save_checkpoint
from .training import TrainConfig, fit

__version__ = "0.1.0"

__all__ = [
    "backend", "ConfigError", "ContractError", "DegenerateScaleError", "DivergenceError",
    "FrwkvError", "IncompleteGridError", "ProtocolError", "ShapeError", "Forecaster",
    "ModelConfig", "count_parameters", "load_checkpoint", "save_checkpoint", "TrainConfig", "fit",
]
