"""Experiment configs, batch runs and the ``wiorbo`` command line."""

from .config import ALGORITHMS, PROBLEMS, ExperimentConfig, load_config, parse_config
from .experiment import (
    ComparisonSummary,
    ExperimentResult,
    SamplerSummary,
    build_problem,
    fit_sampler_errors,
    run_experiment,
    run_trial,
)

__all__ = [
    "ALGORITHMS",
    "PROBLEMS",
    "ComparisonSummary",
    "ExperimentConfig",
    "ExperimentResult",
    "SamplerSummary",
    "build_problem",
    "fit_sampler_errors",
    "load_config",
    "parse_config",
    "run_experiment",
    "run_trial",
]
