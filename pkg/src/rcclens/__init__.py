"""Cluster DNN failures by their heatmaps, search a simulator for each cluster's
unsafe region, describe it with readable rules, and retrain on samples drawn
from those rules."""

__version__ = "0.1.0"

from .config import Config, ConfigError
from .pipeline import PipelineReport, run_pipeline, write_outputs
from .simulator import ReferenceSimulator, make_simulator
from .space import ParameterSpace, ParameterSpec

__all__ = [
    "Config",
    "ConfigError",
    "ParameterSpace",
    "ParameterSpec",
    "PipelineReport",
    "ReferenceSimulator",
    "make_simulator",
    "run_pipeline",
    "write_outputs",
    "__version__",
]
