"""Experiment drivers, configuration, data formats and the command line."""

from .config import ConfigError, ExperimentConfig, config_from_dict, load_config, with_overrides
from .gnn import run_gnn
from .gradcheck import run_gradcheck
from .hopfield import run_hopfield
from .hyperopt import run_hyperopt
from .io import DataFormatError, TrialRecord, emit_metrics, load_graph, load_patterns

__all__ = [
    "ConfigError",
    "DataFormatError",
    "ExperimentConfig",
    "TrialRecord",
    "config_from_dict",
    "emit_metrics",
    "load_config",
    "load_graph",
    "load_patterns",
    "run_gnn",
    "run_gradcheck",
    "run_hopfield",
    "run_hyperopt",
    "with_overrides",
]
