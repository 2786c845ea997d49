"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line to the terminal
(even without ``-s``) so the suite doubles as a report.
"""

import time

import numpy as np
import pytest

from conftest import rel_err
from wiorbo.core import COUNTER_KINDS, IterateBO, RateConfig
from wiorbo.oracle import (
    BilevelOracle,
    CompositionalOracle,
    ConditionalCompositionalOracle,
    ConditionalOracle,
    MinimaxOracle,
    exact_hypergradient,
    exact_hypergradient_conditional,
    fd_check_hypergradient,
)
from wiorbo.problems import (
    QuadMinimax,
    gen_data_cleaning_small,
    gen_irm,
    gen_linear_comp,
    gen_quad_minimax,
    gen_quadratic_bilevel,
)
from wiorbo.sampler import Strategy, default_k_values, make_order, measure_avg_gradient_error
from wiorbo.solvers import (
    CondRunConfig,
    RunConfig,
    inner_contraction,
    wior_bo,
    wior_cbo,
    wior_ccomp,
    wior_comp,
    wior_minimax,
)
from wiorbo.solvers.trace import epoch_order

SEEDS = range(5)
PERMUTATION = (Strategy.SHUFFLE_ONCE, Strategy.RANDOM_RESHUFFLE)


@pytest.fixture
def report(request, pytestconfig):
    """Print the pass/fail line for the criterion named in the test's marker."""
    number = request.node.get_closest_marker("criterion").args[0]
    yield
    failed = getattr(request.node, "rep_call", None) is None or request.node.rep_call.failed
    capman = pytestconfig.pluginmanager.getplugin("capturemanager")
    with capman.global_and_fixture_disabled():
        print(f"\ncriterion {number}: {'FAIL' if failed else 'PASS'}")


def _timed(limit):
    start = time.perf_counter()
    return lambda: time.perf_counter() - start <= limit


# -- shared runs for the convergence, ordering and projection criteria --------------


@pytest.fixture(scope="module")
def convergence_runs():
    runs = {}
    start = time.perf_counter()
    for seed in SEEDS:
        o, sol = gen_quadratic_bilevel(10, 10, 32, 32, kappa_target=10.0, seed=seed, interpolate=True)
        for s in Strategy:
            cfg = RunConfig(200, RateConfig(0.05, 0.2, 0.2), strategy=s, seed=seed)
            runs["bo", seed, s] = (wior_bo(o, IterateBO.zeros(10, 10), cfg), sol.x_star)

        o, (xs, ys) = gen_quad_minimax(5, 5, 16, seed=seed)
        trace = wior_minimax(o, (np.zeros(5), np.zeros(5)), RunConfig(500, RateConfig(0.05, 0.2, 0.0), seed=seed))
        runs["minimax", seed] = (trace, np.r_[xs, ys])

        o, x_star = gen_linear_comp(4, 6, 8, 8, seed=seed)
        cfg = RunConfig(600, RateConfig(0.05, 0.5, 0.5, decay=0.05), seed=seed)
        runs["comp", seed] = (wior_comp(o, IterateBO.zeros(4, 6), cfg), x_star)

        o, x_star = gen_linear_comp(4, 6, 8, 5, seed=seed, conditional=True, interpolate=True)
        cfg = CondRunConfig(60, 5, RateConfig(0.2, 0.5, 0.5), seed=seed)
        runs["ccomp", seed] = (wior_ccomp(o, np.zeros(4), cfg), x_star)

    bilinear = QuadMinimax.bilinear()
    trace = wior_minimax(bilinear, (np.ones(1), np.zeros(1)), RunConfig(400, RateConfig(0.1, 0.1, 0.0)))
    runs["bilinear"] = (trace, np.zeros(2))
    runs["seconds"] = time.perf_counter() - start
    return runs


@pytest.fixture(scope="module")
def ordering_runs():
    runs = {}
    start = time.perf_counter()
    for seed in SEEDS:
        o = gen_irm(100, 20, seed=seed)
        for s in (Strategy.INDEPENDENT, Strategy.RANDOM_RESHUFFLE):
            cfg = CondRunConfig(40, 2, RateConfig(0.02, 0.3, 0.3), strategy=s, seed=seed)
            runs[seed, s] = wior_cbo(o, np.zeros(o.p), cfg)
    runs["seconds"] = time.perf_counter() - start
    return runs


# -- criteria ----------------------------------------------------------------------


@pytest.mark.criterion(1)
def test_hypergradient_correctness(report):
    within = _timed(30)
    for seed in SEEDS:
        o, _ = gen_quadratic_bilevel(10, 10, 32, 32, kappa_target=10.0, seed=seed)
        x = np.random.default_rng(seed).standard_normal(o.p)
        assert rel_err(exact_hypergradient(o, x, tol=1e-10), o.hypergradient(x)) <= 1e-8
        assert fd_check_hypergradient(o, x, h_step=1e-5, inner_tol=1e-10) <= 1e-4

        o = gen_irm(100, 20, seed=seed)
        x = np.random.default_rng(seed).standard_normal(o.p)
        assert rel_err(exact_hypergradient_conditional(o, x, tol=1e-10), o.hypergradient(x)) <= 1e-8
        assert fd_check_hypergradient(o, x, h_step=1e-5, inner_tol=1e-10) <= 1e-4
    assert within()


def _datasets(oracle, rng):
    """``(per-example rows, full-batch reference)`` for every dataset of an oracle."""
    p, d = oracle.p, oracle.d
    x, y = rng.standard_normal(p), rng.standard_normal(d)
    if isinstance(oracle, BilevelOracle):
        yield np.array([np.r_[oracle.grad_f_x(x, y, i), oracle.grad_f_y(x, y, i)] for i in range(oracle.m)]), np.r_[
            oracle.full_grad_f_x(x, y), oracle.full_grad_f_y(x, y)
        ]
        yield np.array([oracle.grad_g_y(x, y, j) for j in range(oracle.n)]), oracle.full_grad_g_y(x, y)
    elif isinstance(oracle, MinimaxOracle):
        rows = np.array([np.r_[oracle.grad_f_x(x, y, i), oracle.grad_f_y(x, y, i)] for i in range(oracle.m)])
        yield rows, np.r_[oracle.full_grad_f_x(x, y), oracle.full_grad_f_y(x, y)]
    elif isinstance(oracle, CompositionalOracle):
        yield np.array([oracle.grad_f_y(y, i) for i in range(oracle.m)]), oracle.full_grad_f_y(y)
        yield np.array([oracle.r(x, j) for j in range(oracle.n)]), oracle.full_r(x)
    elif isinstance(oracle, ConditionalOracle):
        rows = np.array([np.r_[oracle.grad_f_x(x, y, i), oracle.grad_f_y(x, y, i)] for i in range(oracle.m)])
        yield rows, rows.mean(axis=0)
        for i in range(oracle.m):
            rows = np.array([oracle.grad_g_y(x, y, i, j) for j in range(oracle.n_inner(i))])
            yield rows, oracle.full_grad_g_y(x, y, i)
    elif isinstance(oracle, ConditionalCompositionalOracle):
        rows = np.array([oracle.grad_f_y(y, i) for i in range(oracle.m)])
        yield rows, rows.mean(axis=0)
        for i in range(oracle.m):
            yield np.array([oracle.r(x, i, j) for j in range(oracle.n_inner(i))]), oracle.full_r(x, i)
    else:
        raise TypeError(type(oracle).__name__)


@pytest.mark.criterion(2)
def test_permutation_blocks_are_exact(report):
    within = _timed(5)
    problems = [
        gen_quadratic_bilevel(4, 3, 6, 5, seed=0)[0],
        gen_data_cleaning_small(12, 8, seed=0),
        gen_irm(10, [3, 1, 4, 2, 5, 2, 3, 1, 2, 4], p=3, seed=0),
        gen_quad_minimax(3, 2, 7, seed=0)[0],
        gen_linear_comp(3, 4, 6, 5, seed=0)[0],
        gen_linear_comp(3, 4, 6, 5, seed=0, conditional=True)[0],
    ]
    rng = np.random.default_rng(0)
    for oracle in problems:
        for rows, full in _datasets(oracle, rng):
            n = rows.shape[0]
            for strategy in PERMUTATION:
                order = make_order(strategy, n, 4 * n, seed=1)
                for block in order.blocks():
                    assert rel_err(rows[block].mean(axis=0), full) <= 1e-12
    assert within()


@pytest.mark.criterion(3)
def test_reshuffle_error_contracts_faster(report):
    within = _timed(60)
    oracle, _ = gen_quadratic_bilevel(10, 10, 32, 32, kappa_target=10.0, seed=0)
    x, y = np.zeros(10), np.zeros(10)
    G = np.array([np.r_[oracle._grad_f_x(x, y, i), oracle._grad_f_y(x, y, i)] for i in range(32)])
    length = 256 * 32
    ks = default_k_values(length)
    alpha = {
        s: np.median([measure_avg_gradient_error(G, make_order(s, 32, length, seed), ks).alpha_hat for seed in range(20)])
        for s in (Strategy.INDEPENDENT, Strategy.RANDOM_RESHUFFLE)
    }
    assert alpha[Strategy.RANDOM_RESHUFFLE] >= alpha[Strategy.INDEPENDENT] + 0.5
    assert within()


@pytest.mark.criterion(4)
def test_single_step_examples(report, tiny_bilevel, bilinear):
    within = _timed(1)
    trace = wior_bo(tiny_bilevel, IterateBO.zeros(1, 1), RunConfig(1, RateConfig(0.1, 0.1, 0.1), max_steps=1))
    f = trace.final
    assert np.max(np.abs(np.r_[f.x, f.y, f.u] - [0.0, 0.0, -0.1])) <= 1e-15
    trace = wior_minimax(bilinear, (np.ones(1), np.zeros(1)), RunConfig(1, RateConfig(0.1, 0.1, 0.0), max_steps=1))
    f = trace.final
    assert np.max(np.abs(np.r_[f.x, f.y] - [1.0, 0.1])) <= 1e-15
    assert within()


@pytest.mark.criterion(5)
def test_convergence_to_analytic_optima(report, convergence_runs):
    runs = convergence_runs
    for seed in SEEDS:
        for s in Strategy:
            trace, _ = runs["bo", seed, s]
            assert trace.epochs_to_tolerance(1e-3) <= 200
        trace, z_star = runs["minimax", seed]
        assert np.linalg.norm(np.r_[trace.final.x, trace.final.y] - z_star) <= 1e-6
        for kind in ("comp", "ccomp"):
            trace, x_star = runs[kind, seed]
            assert np.linalg.norm(trace.final.x - x_star) <= 1e-3
    trace, z_star = runs["bilinear"]
    assert np.linalg.norm(np.r_[trace.final.x, trace.final.y] - z_star) <= 1e-6
    assert runs["seconds"] <= 120


@pytest.mark.criterion(6)
def test_reshuffle_not_slower_on_irm(report, ordering_runs):
    runs = ordering_runs
    rr, ind = Strategy.RANDOM_RESHUFFLE, Strategy.INDEPENDENT
    ett = {s: np.median([runs[seed, s].epochs_to_tolerance(0.02) for seed in SEEDS]) for s in (rr, ind)}
    assert np.isfinite(ett[rr]) and ett[rr] <= ett[ind]
    for seed in SEEDS:
        a, b = runs[seed, rr], runs[seed, ind]
        epochs = a.column("epoch")
        assert np.array_equal(epochs, b.column("epoch"))
        late = epochs > 3
        below = a.column("hypergrad_norm")[late] <= b.column("hypergrad_norm")[late]
        assert below.mean() >= 0.8
    assert runs["seconds"] <= 300


@pytest.mark.criterion(7)
def test_counter_accounting(report):
    o, _ = gen_quadratic_bilevel(3, 2, 4, 6, seed=0)
    trace = wior_bo(o, IterateBO.zeros(3, 2), RunConfig(9, RateConfig(0.05, 0.1, 0.1), eval_interval=1, max_steps=100))
    c = np.array([[r.counters[k] for k in COUNTER_KINDS] for r in trace.records])
    assert len(c) == 101
    assert np.all(np.diff(c, axis=0) == [2, 1, 1, 1])

    sizes = np.random.default_rng(0).integers(1, 6, size=20).tolist()
    o = gen_irm(20, sizes, p=3, seed=0)
    S = 3
    cfg = CondRunConfig(5, S, RateConfig(0.05, 0.2, 0.2), seed=4, eval_interval=1)
    trace = wior_cbo(o, np.zeros(3), cfg)
    c = np.array([[r.counters[k] for k in COUNTER_KINDS] for r in trace.records])
    order = np.concatenate([epoch_order(cfg, "xi", 20, 20, r) for r in range(5)])
    expected = np.array([[S * sizes[i] + 1, S * sizes[i], 1, S * sizes[i]] for i in order])
    assert len(expected) == 100
    assert np.array_equal(np.diff(c, axis=0), expected)


@pytest.mark.criterion(8)
def test_projection_invariant(report, convergence_runs, ordering_runs):
    checked = 0
    for runs in (convergence_runs, ordering_runs):
        for key, value in runs.items():
            if key == "seconds":
                continue
            trace = value[0] if isinstance(value, tuple) else value
            if trace.iota is None:
                continue
            assert trace.boundary_u_norms
            assert trace.projection_violations == 0
            checked += 1
    assert checked > 0


@pytest.mark.criterion(9)
def test_inner_loop_contraction(report):
    for seed in SEEDS:
        o = gen_irm(100, 20, seed=seed)
        x = np.random.default_rng(seed).standard_normal(o.p)
        cfg = CondRunConfig(1, 20, RateConfig(0.02, 0.001, 0.001), two_phase=True)
        errs = inner_contraction(o, x, 3, cfg)
        assert len(errs) == 20
        assert np.all(np.diff(errs) <= 0)
