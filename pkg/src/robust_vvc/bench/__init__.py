from .config import ConfigError, ExperimentConfig
from .runner import NumericalError, cmd_bruteforce, cmd_eval, cmd_report, cmd_train, robust_grid_search

__all__ = [
    "ConfigError", "ExperimentConfig", "NumericalError", "cmd_bruteforce", "cmd_eval", "cmd_report",
    "cmd_train", "robust_grid_search",
]
