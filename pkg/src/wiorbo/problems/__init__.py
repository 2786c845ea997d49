"""Problem instances with analytic derivatives and closed-form references."""

from .cleaning import DataCleaningSmall, gen_data_cleaning_small
from .composition import ConditionalLinearComp, LinearComp, gen_linear_comp
from .io import dumps, load_instance, loads, save_instance
from .irm import SyntheticIRM, gen_irm
from .minimax import QuadMinimax, gen_quad_minimax
from .quadratic import QuadraticBilevel, QuadraticSolution, gen_quadratic_bilevel

__all__ = [
    "ConditionalLinearComp",
    "DataCleaningSmall",
    "LinearComp",
    "QuadMinimax",
    "QuadraticBilevel",
    "QuadraticSolution",
    "SyntheticIRM",
    "dumps",
    "gen_data_cleaning_small",
    "gen_irm",
    "gen_linear_comp",
    "gen_quad_minimax",
    "gen_quadratic_bilevel",
    "load_instance",
    "loads",
    "save_instance",
]
