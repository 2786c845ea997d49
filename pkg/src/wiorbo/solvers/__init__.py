"""Single-loop and double-loop solvers with their run traces."""

from .double_loop import (
    CondRunConfig,
    InnerResult,
    WarmStart,
    cbo_inner,
    ccomp_inner,
    inner_contraction,
    theory_rates,
    wior_cbo,
    wior_ccomp,
)
from .single_loop import wior_bo, wior_comp, wior_minimax
from .trace import CSV_COLUMNS, RunConfig, RunTrace, TraceRecord

__all__ = [
    "CSV_COLUMNS",
    "CondRunConfig",
    "InnerResult",
    "RunConfig",
    "RunTrace",
    "TraceRecord",
    "WarmStart",
    "cbo_inner",
    "ccomp_inner",
    "inner_contraction",
    "theory_rates",
    "wior_bo",
    "wior_cbo",
    "wior_ccomp",
    "wior_comp",
    "wior_minimax",
]
