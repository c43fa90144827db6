"""Risk-sensitive actor-critic with a distributional quantile critic, on a small numpy autodiff core."""

from .config import TrainConfig, load_config
from .errors import ConfigError, ContractError, ConvergenceError, RiskgradError, ShapeError, TrainingAborted

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "ConvergenceError",
    "RiskgradError",
    "ShapeError",
    "TrainConfig",
    "TrainingAborted",
    "load_config",
]
