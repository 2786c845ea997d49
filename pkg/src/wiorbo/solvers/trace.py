"""Run configuration and the trace every solver returns."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..core import COUNTER_KINDS, IterateBO, OracleCounters, RateConfig
from ..errors import DivergenceError
from ..oracle import TRACE_TOL
from ..sampler import Strategy, derive_seed, make_order

CSV_COLUMNS = ("step", "epoch", "hypergrad_norm", "loss", "y_err", "u_err", *COUNTER_KINDS, "wall_seconds")
DIVERGENCE_NORM = 1e12


@dataclass(frozen=True)
class RunConfig:
    """Settings for a single-loop run.

    ``eval_interval`` counts steps between reference evaluations; ``None``
    means once per epoch. ``max_steps`` stops the run early (used for
    single-step checks) and ``max_wall_seconds`` truncates it.
    """

    epochs: int
    rates: RateConfig
    strategy: Strategy = Strategy.RANDOM_RESHUFFLE
    seed: int = 0
    eval_interval: int | None = None
    max_wall_seconds: float | None = None
    max_steps: int | None = None
    eval_tol: float = TRACE_TOL

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.eval_interval is not None and self.eval_interval < 1:
            raise ValueError("eval_interval must be >= 1")
        if self.max_wall_seconds is not None and not self.max_wall_seconds > 0:
            raise ValueError("max_wall_seconds must be positive")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")


@dataclass(frozen=True)
class TraceRecord:
    step: int
    epoch: int
    hypergrad_norm: float
    loss: float | None
    y_err: float | None
    u_err: float | None
    counters: dict
    wall_seconds: float


@dataclass
class RunTrace:
    records: list = field(default_factory=list)
    final: IterateBO | None = None
    stop_reason: str = "completed"
    iota: float | None = None
    boundary_u_norms: list = field(default_factory=list)
    algorithm: str = ""
    strategy: str = ""
    seed: int = 0

    @property
    def truncated(self) -> bool:
        return self.stop_reason == "wall_clock"

    @property
    def projection_violations(self) -> int:
        if self.iota is None:
            return 0
        return sum(1 for v in self.boundary_u_norms if v > self.iota)

    @property
    def counters(self) -> dict:
        return dict(self.records[-1].counters) if self.records else {k: 0 for k in COUNTER_KINDS}

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) if getattr(r, name) is not None else np.nan for r in self.records])

    def epochs_to_tolerance(self, target: float) -> float:
        for r in self.records:
            if r.hypergrad_norm <= target:
                return float(r.epoch)
        return math.inf

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.records:
            w.writerow(
                [
                    r.step,
                    r.epoch,
                    repr(r.hypergrad_norm),
                    *("" if v is None else repr(float(v)) for v in (r.loss, r.y_err, r.u_err)),
                    *(r.counters[k] for k in COUNTER_KINDS),
                    f"{r.wall_seconds:.6f}",
                ]
            )
        return buf.getvalue()


def order_seed(config, stream: str, r: int, *extra) -> int:
    """Sub-seed for the order of ``stream`` in epoch ``r``.

    Shuffle-once keeps one permutation per dataset, so the epoch index is
    dropped from its seed.
    """
    if config.strategy is Strategy.SHUFFLE_ONCE:
        return derive_seed(config.seed, stream, *extra)
    return derive_seed(config.seed, stream, r, *extra)


def epoch_order(config, stream, n_examples, length, r, *extra) -> np.ndarray:
    return make_order(config.strategy, n_examples, length, order_seed(config, stream, r, *extra)).indices


class Recorder:
    """Reference evaluations, run counters and stopping rules shared by all solvers.

    ``reference(state)`` returns ``(hypergrad_norm, loss, y_err, u_err)``;
    its oracle calls go to a separate tally so they never touch the run
    counters.
    """

    def __init__(self, oracle, config, reference, name, iota=None):
        self.oracle = oracle
        self.config = config
        self.reference = reference
        self.counters = OracleCounters()
        self.reference_counters = OracleCounters()
        self.trace = RunTrace(iota=iota, algorithm=name, strategy=config.strategy.value, seed=int(config.seed))
        self.t0 = time.perf_counter()
        self.step = 0

    def log(self, epoch, state):
        if self.trace.records and self.trace.records[-1].step == self.step:
            return
        with self.oracle.tally(self.reference_counters):
            norm, loss, y_err, u_err = self.reference(state)
        self.trace.records.append(
            TraceRecord(
                self.step, epoch, float(norm), loss, y_err, u_err, self.counters.snapshot(), self.elapsed()
            )
        )

    def elapsed(self) -> float:
        return time.perf_counter() - self.t0

    def boundary(self, u):
        self.trace.boundary_u_norms.append(float(np.linalg.norm(u)))

    def should_stop(self) -> bool:
        cfg = self.config
        if cfg.max_steps is not None and self.step >= cfg.max_steps:
            self.trace.stop_reason = "max_steps"
            return True
        if cfg.max_wall_seconds is not None and self.elapsed() > cfg.max_wall_seconds:
            self.trace.stop_reason = "wall_clock"
            return True
        return False

    def check(self, arrays, epoch, last: IterateBO):
        """Abort with the partial trace when the new ``(x, ...)`` arrays are
        non-finite or ``x`` blows up; ``last`` is the previous accepted state."""
        bad = not all(np.all(np.isfinite(a)) for a in arrays)
        if bad or np.linalg.norm(arrays[0]) > DIVERGENCE_NORM:
            self.trace.stop_reason = "diverged"
            self.trace.final = last.copy()
            what = "non-finite iterate" if bad else f"||x|| exceeded {DIVERGENCE_NORM:g}"
            raise DivergenceError(f"{self.trace.algorithm}: {what} at step {self.step} (epoch {epoch})", self.trace)
