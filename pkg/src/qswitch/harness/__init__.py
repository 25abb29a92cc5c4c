"""Configuration, presets, Monte Carlo runs and the command-line interface."""

from .config import ExperimentConfig, GeneratorSpec
from .presets import PRESETS, get_preset, preset_ghz3, preset_spin32
from .runner import PrerequisiteError, RunSummary, estimate_lyapunov_exponent, run_experiment

__all__ = [
    "ExperimentConfig",
    "GeneratorSpec",
    "PRESETS",
    "PrerequisiteError",
    "RunSummary",
    "estimate_lyapunov_exponent",
    "get_preset",
    "preset_ghz3",
    "preset_spin32",
    "run_experiment",
]
