"""Federated-learning simulator with class-wise (Maverick-aware) Shapley client selection."""
from .config import ExperimentConfig, parse_config
from .engine import ExperimentReport, RoundRecord, ablation_without_mavericks, run_experiment
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ExperimentConfig",
    "ExperimentReport",
    "RoundRecord",
    "ablation_without_mavericks",
    "parse_config",
    "run_experiment",
]
