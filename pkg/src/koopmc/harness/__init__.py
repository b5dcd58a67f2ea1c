"""Experiment orchestration: configs, sweeps, statistics and CSV output."""

from .config import ConfigError, ExperimentConfig, build_dictionary, config_from_dict, load_config
from .sweeps import (
    fit_slope,
    run_bound_report,
    run_data_sweep,
    run_dictionary_sweep,
    run_eigen_tracking,
    run_noise_sweep,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "build_dictionary",
    "config_from_dict",
    "load_config",
    "fit_slope",
    "run_bound_report",
    "run_data_sweep",
    "run_dictionary_sweep",
    "run_eigen_tracking",
    "run_noise_sweep",
]
