"""Experiment runner: spec files in, checkpoints, metrics and reports out."""
from .main import EXIT_ABORT, EXIT_INVALID, EXIT_OK, build_parser, main
from .runner import RunManifest, report_series, run_experiment
from .spec import ExperimentSpec, SpecError, load_experiment, load_matrix, parse_experiment, parse_matrix

__all__ = [
    "EXIT_ABORT",
    "EXIT_INVALID",
    "EXIT_OK",
    "ExperimentSpec",
    "RunManifest",
    "SpecError",
    "build_parser",
    "load_experiment",
    "load_matrix",
    "main",
    "parse_experiment",
    "parse_matrix",
    "report_series",
    "run_experiment",
]
