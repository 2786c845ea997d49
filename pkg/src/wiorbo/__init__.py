"""Without-replacement sampling solvers for bilevel, conditional, minimax and compositional problems."""

from .core import (
    EpochPlan,
    IterateBO,
    OracleCounters,
    ProblemMeta,
    RateConfig,
    plan_epoch,
    project_ball,
)
from .sampler import GradientErrorFit, SampleOrder, Strategy, make_order, measure_avg_gradient_error

__version__ = "0.1.0"

__all__ = [
    "EpochPlan",
    "GradientErrorFit",
    "IterateBO",
    "OracleCounters",
    "ProblemMeta",
    "RateConfig",
    "SampleOrder",
    "Strategy",
    "make_order",
    "measure_avg_gradient_error",
    "plan_epoch",
    "project_ball",
]
