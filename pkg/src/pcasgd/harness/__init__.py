"""Config files, experiment runner and CLI."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .runner import run_cell, sweep

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "run_cell", "sweep"]
