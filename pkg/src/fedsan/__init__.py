"""FEDSAN - federated data sanitization against data poisoning."""
from .config import ExperimentConfig, default_config, parse_config
from .pipeline import Experiment, run_experiment, sweep

__all__ = ["Experiment", "ExperimentConfig", "default_config", "parse_config", "run_experiment", "sweep"]
