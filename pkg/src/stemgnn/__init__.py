"""Spectral-temporal graph forecasting on a small numpy autodiff core."""

from .errors import (ConfigurationError, DataError, DimensionError, DomainError,
                     IntegrityError, NumericError, StemGNNError)
from .model import VARIANTS, AblationFlags, ModelConfig, NetworkParams, init_params, network_forward
from .training import Dataset, TrainConfig, train

__all__ = [
    "AblationFlags", "ConfigurationError", "DataError", "Dataset", "DimensionError",
    "DomainError", "IntegrityError", "ModelConfig", "NetworkParams", "NumericError",
    "StemGNNError", "TrainConfig", "VARIANTS", "init_params", "network_forward", "train",
]
__version__ = "0.1.0"
