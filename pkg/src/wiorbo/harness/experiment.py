"""Run (sampler, seed) trials, write traces and summarise them."""

from __future__ import annotations

import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..core import IterateBO, OracleCounters, RateConfig
from ..errors import ConfigError, DivergenceError, UnsupportedProblemError
from ..oracle import (
    BilevelOracle,
    CompositionalOracle,
    ConditionalCompositionalOracle,
    ConditionalOracle,
    ConditionalView,
    MinimaxOracle,
)
from ..sampler import default_k_values, derive_seed, make_order, measure_avg_gradient_error
from ..solvers import (
    CondRunConfig,
    RunConfig,
    theory_rates,
    wior_bo,
    wior_cbo,
    wior_ccomp,
    wior_comp,
    wior_minimax,
)
from .config import DOUBLE_LOOP, PROBLEMS, ExperimentConfig

DEFAULT_OUT_DIR = "wiorbo-out"
OUT_DIR_ENV = "WIORBO_OUT_DIR"
SUMMARY_NAME = "summary.json"
FIT_NAME = "fit.json"


def build_problem(config: ExperimentConfig):
    """Generate the configured instance (generators that return a reference drop it here)."""
    gen, fixed, _ = PROBLEMS[config.problem]
    try:
        out = gen(**config.problem_params, **fixed, seed=config.problem_seed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"problem: cannot build {config.problem!r}: {exc}") from None
    return out[0] if isinstance(out, tuple) else out


def _rates(config: ExperimentConfig, oracle) -> RateConfig:
    run = config.run
    if run.get("theory_rates", False):
        return theory_rates(oracle.meta, iota=run.get("iota"))
    return RateConfig(
        eta=float(run["eta"]),
        gamma=float(run["gamma"]),
        rho=float(run.get("rho", 0.0)),
        iota=run.get("iota"),
        decay=float(run.get("decay", 0.0)),
    )


def run_trial(config: ExperimentConfig, strategy, seed: int):
    """One solver run; returns ``(trace, diverged)``."""
    oracle = build_problem(config)
    rates = _rates(config, oracle)
    run = config.run
    common = dict(
        rates=rates,
        strategy=strategy,
        seed=seed,
        eval_interval=run.get("eval_interval"),
        max_wall_seconds=run.get("max_wall_seconds"),
    )
    try:
        if config.algorithm in DOUBLE_LOOP:
            cfg = CondRunConfig(
                epochs=run["epochs"],
                inner_epochs=run.get("inner_epochs", 1),
                warm_start=run.get("warm_start", "fresh"),
                two_phase=run.get("two_phase", False),
                **common,
            )
            if config.algorithm == "wior_cbo":
                if isinstance(oracle, BilevelOracle):
                    oracle = ConditionalView(oracle)
                trace = wior_cbo(oracle, np.zeros(oracle.p), cfg)
            else:
                trace = wior_ccomp(oracle, np.zeros(oracle.p), cfg)
        else:
            cfg = RunConfig(epochs=run["epochs"], **common)
            init = IterateBO.zeros(oracle.p, oracle.d)
            solver = {"wior_bo": wior_bo, "wior_comp": wior_comp, "wior_minimax": wior_minimax}[config.algorithm]
            trace = solver(oracle, init, cfg)
    except DivergenceError as exc:
        return exc.trace, True
    return trace, False


def _trial_job(args):
    config, strategy, seed = args
    return run_trial(config, strategy, seed)


def write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_float(v):
    return None if v is None or not math.isfinite(v) else float(v)


@dataclass
class SamplerSummary:
    sampler: str
    median_epochs_to_tolerance: float
    median_final_hypergrad_norm: float
    counter_totals: dict
    completed_trials: int
    incomplete_trials: list
    alpha_hat: float | None = None
    C_hat: float | None = None
    fit_dataset: str | None = None

    def to_dict(self) -> dict:
        return {
            "sampler": self.sampler,
            "median_epochs_to_tolerance": _json_float(self.median_epochs_to_tolerance),
            "median_final_hypergrad_norm": _json_float(self.median_final_hypergrad_norm),
            "counter_totals": self.counter_totals,
            "completed_trials": self.completed_trials,
            "incomplete_trials": self.incomplete_trials,
            "alpha_hat": _json_float(self.alpha_hat),
            "C_hat": _json_float(self.C_hat),
            "fit_dataset": self.fit_dataset,
        }


@dataclass
class ComparisonSummary:
    """Per-sampler medians over completed trials.

    Trials that never reach the target count as ``inf`` epochs (written as
    ``null`` in JSON). Diverged or wall-clock truncated trials are listed
    under ``incomplete_trials`` and left out of the medians.
    """

    problem: str
    algorithm: str
    target: float
    samplers: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "algorithm": self.algorithm,
            "grad_norm_target": self.target,
            "samplers": {k: v.to_dict() for k, v in self.samplers.items()},
        }


@dataclass
class ExperimentResult:
    traces: dict
    summary: ComparisonSummary
    diverged: list
    out_dir: str

    @property
    def exit_code(self) -> int:
        return 2 if self.diverged else 0


def trace_filename(config: ExperimentConfig, strategy, seed) -> str:
    return f"{config.algorithm}_{strategy.value}_seed{seed}.csv"


def resolve_out_dir(config: ExperimentConfig) -> str:
    return config.out_dir or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR


def _pick_fit(fits: dict | None):
    """Prefer the outer dataset; fall back to the inner one when every outer gradient is identical."""
    if not fits:
        return None, {}
    for name in ("outer", "inner"):
        per = fits.get(name)
        if per and any(v["C_hat_median"] > 0 for v in per.values()):
            return name, per
    return None, {}


def summarise(config: ExperimentConfig, traces: dict, diverged: list, fits: dict | None = None) -> ComparisonSummary:
    fit_name, fit_per = _pick_fit(fits)
    summary = ComparisonSummary(config.problem, config.algorithm, config.grad_norm_target)
    for strategy in config.samplers:
        totals = OracleCounters()
        ett, finals, incomplete = [], [], []
        for seed in config.seeds:
            trace = traces[(strategy, seed)]
            counts = trace.counters
            for k, v in counts.items():
                totals.add(k, v)
            if (strategy, seed) in diverged or trace.truncated:
                incomplete.append({"seed": seed, "reason": trace.stop_reason})
                continue
            ett.append(trace.epochs_to_tolerance(config.grad_norm_target))
            finals.append(trace.records[-1].hypergrad_norm)
        fit = fit_per.get(strategy.value)
        summary.samplers[strategy.value] = SamplerSummary(
            sampler=strategy.value,
            median_epochs_to_tolerance=float(np.median(ett)) if ett else math.inf,
            median_final_hypergrad_norm=float(np.median(finals)) if finals else math.inf,
            counter_totals=totals.snapshot(),
            completed_trials=len(ett),
            incomplete_trials=incomplete,
            alpha_hat=fit["alpha_hat_median"] if fit else None,
            C_hat=fit["C_hat_median"] if fit else None,
            fit_dataset=fit_name,
        )
    return summary


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    """Run every (sampler, seed) pair, then write one CSV per trace plus ``summary.json``."""
    if not config.seeds:
        raise ConfigError("trials.seeds: at least one trial seed is required")
    out_dir = resolve_out_dir(config)
    os.makedirs(out_dir, exist_ok=True)
    tasks = [(config, s, seed) for s in config.samplers for seed in config.seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_trial_job, tasks))
    else:
        results = [_trial_job(t) for t in tasks]

    traces, diverged = {}, []
    for (_, strategy, seed), (trace, bad) in zip(tasks, results):
        traces[(strategy, seed)] = trace
        if bad:
            diverged.append((strategy, seed))
        write_atomic(os.path.join(out_dir, trace_filename(config, strategy, seed)), trace.to_csv())

    try:
        fits = fit_sampler_errors(config, write=False)
    except UnsupportedProblemError:
        fits = None
    summary = summarise(config, traces, diverged, fits)
    write_atomic(os.path.join(out_dir, SUMMARY_NAME), json.dumps(summary.to_dict(), indent=2) + "\n")
    return ExperimentResult(traces, summary, diverged, out_dir)


# -- gradient-error fits ------------------------------------------------------------


def per_example_gradients(oracle) -> dict:
    """Per-example gradient matrices at the zero state, keyed by dataset.

    ``outer`` stacks ``(grad_x f, grad_y f)`` for every outer example;
    ``inner`` stacks ``grad_y g`` (bilevel) or ``r`` (compositional) when
    the inner dataset is shared by all outer examples.
    """
    p, d = oracle.p, oracle.d
    x, y = np.zeros(p), np.zeros(d)
    try:
        if isinstance(oracle, (BilevelOracle, ConditionalOracle, MinimaxOracle)):
            outer = [np.r_[oracle._grad_f_x(x, y, i), oracle._grad_f_y(x, y, i)] for i in range(oracle.m)]
        elif isinstance(oracle, (CompositionalOracle, ConditionalCompositionalOracle)):
            outer = [oracle._grad_f_y(y, i) for i in range(oracle.m)]
        else:
            raise UnsupportedProblemError(f"{type(oracle).__name__} has no per-example gradients")
        out = {"outer": np.array(outer)}
        if isinstance(oracle, BilevelOracle):
            out["inner"] = np.array([oracle._grad_g_y(x, y, j) for j in range(oracle.n)])
        elif isinstance(oracle, CompositionalOracle):
            out["inner"] = np.array([oracle._r(x, j) for j in range(oracle.n)])
    except NotImplementedError:
        raise UnsupportedProblemError(f"{type(oracle).__name__} lacks per-example gradients") from None
    return out


def fit_sampler_errors(config: ExperimentConfig, write: bool = True) -> dict:
    """Fit the averaged gradient error of every sampler at the zero state.

    Orders span ``fit_order_epochs`` passes over each dataset; one order per
    trial seed. Returns ``{dataset: {sampler: {...}}}`` and writes it to
    ``fit.json`` when ``write`` is set.
    """
    oracle = build_problem(config)
    grads = per_example_gradients(oracle)
    result = {}
    for dataset, G in grads.items():
        n = G.shape[0]
        length = config.fit_order_epochs * n
        ks = np.array(config.fit_k_values) if config.fit_k_values else default_k_values(length)
        if ks.max() > length:
            raise ConfigError(f"fit.k_values: largest k exceeds the order length {length}")
        per_sampler = {}
        for strategy in config.samplers:
            fits = [
                measure_avg_gradient_error(G, make_order(strategy, n, length, derive_seed(seed, "fit", dataset)), ks)
                for seed in config.seeds
            ]
            alphas = [f.alpha_hat for f in fits]
            per_sampler[strategy.value] = {
                "alpha_hat_median": float(np.median(alphas)),
                "C_hat_median": float(np.median([f.C_hat for f in fits])),
                "A_hat": fits[0].A_hat,
                "trials": [dict(seed=s, **f.to_dict()) for s, f in zip(config.seeds, fits)],
            }
        result[dataset] = per_sampler
    if write:
        out_dir = resolve_out_dir(config)
        os.makedirs(out_dir, exist_ok=True)
        write_atomic(os.path.join(out_dir, FIT_NAME), json.dumps(_jsonable(result), indent=2) + "\n")
    return result


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float):
        return _json_float(obj)
    return obj
