"""Double-loop solvers for conditional problems.

Every outer step picks one outer example ``i`` and runs ``S`` inner epochs
over its private inner dataset with ``x`` held fixed, projecting ``u`` at
each inner-epoch start, and then takes one outer step.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ..core import IterateBO, ProblemMeta, RateConfig, project_ball
from ..oracle import TRACE_TOL, conditional_inner_solve, hypergradient_parts_conditional
from ..sampler import Strategy, derive_seed, make_order
from .trace import Recorder, RunTrace, epoch_order


class WarmStart(str, enum.Enum):
    """How ``(y, u)`` start for each outer step.

    ``fresh`` starts from zeros every time. ``carry`` reuses the last
    ``(y, u)`` computed for the same outer example.
    """

    FRESH = "fresh"
    CARRY = "carry"


@dataclass(frozen=True)
class CondRunConfig:
    """Settings for a double-loop run; ``eval_interval`` and ``max_steps`` count outer steps."""

    epochs: int
    inner_epochs: int
    rates: RateConfig
    strategy: Strategy = Strategy.RANDOM_RESHUFFLE
    seed: int = 0
    warm_start: WarmStart = WarmStart.FRESH
    two_phase: bool = False
    eval_interval: int | None = None
    max_wall_seconds: float | None = None
    max_steps: int | None = None
    eval_tol: float = TRACE_TOL

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        object.__setattr__(self, "warm_start", WarmStart(self.warm_start))
        if self.epochs < 1 or self.inner_epochs < 1:
            raise ValueError("epochs and inner_epochs must be >= 1")
        if self.eval_interval is not None and self.eval_interval < 1:
            raise ValueError("eval_interval must be >= 1")
        if self.max_wall_seconds is not None and not self.max_wall_seconds > 0:
            raise ValueError("max_wall_seconds must be positive")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")


def theory_rates(meta: ProblemMeta, k: int = 1, L_bar: float | None = None, iota: float | None = None) -> RateConfig:
    """Conservative preset ``eta = 1/(8 k Lbar)``, ``gamma = 1/(256 k L kappa)``, ``rho = 1/(512 k L kappa)``.

    ``L_bar`` defaults to ``meta.L``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    L_bar = meta.L if L_bar is None else L_bar
    return RateConfig(
        eta=1.0 / (8 * k * L_bar),
        gamma=1.0 / (256 * k * meta.L * meta.kappa),
        rho=1.0 / (512 * k * meta.L * meta.kappa),
        iota=iota,
    )


def inner_order(config, n_i: int, i: int, r: int, t: int, s: int) -> np.ndarray:
    """Order over the inner dataset of outer example ``i`` for inner epoch ``s``."""
    if config.strategy is Strategy.SHUFFLE_ONCE:
        seed = derive_seed(config.seed, "zeta", i)
    else:
        seed = derive_seed(config.seed, "zeta", r, t, s)
    return make_order(config.strategy, n_i, n_i, seed).indices


@dataclass
class InnerResult:
    y: np.ndarray
    u: np.ndarray
    y_errs: list
    boundary_u_norms: list


def cbo_inner(oracle, x, i, y, u, config: CondRunConfig, gamma, rho, iota, r=0, t=0, y_ref=None) -> InnerResult:
    """``S`` inner epochs for outer example ``i`` at fixed ``x``.

    Per inner step with ``b`` drawn from the inner order, both updates read
    the pre-step ``y``::

        y <- y - gamma grad_y g(x, y; i, b)
        u <- u - rho (hvp_yy g(x, y; i, b) u - grad_y f(x, y; i))

    In two-phase mode all ``S`` epochs of ``y`` run first and then ``S``
    epochs of ``u`` at the final ``y``. When ``y_ref`` is given,
    ``||y - y_ref||`` is recorded after every ``y`` epoch.
    """
    n_i = oracle.n_inner(i)
    S = config.inner_epochs
    y, u = np.array(y, dtype=np.float64), np.array(u, dtype=np.float64)
    y_errs, norms = [], []

    def y_epoch(s, y):
        for b in inner_order(config, n_i, i, r, t, s):
            y = y - gamma * oracle.grad_g_y(x, y, i, int(b))
        return y

    if config.two_phase:
        for s in range(S):
            y = y_epoch(s, y)
            if y_ref is not None:
                y_errs.append(float(np.linalg.norm(y - y_ref)))
        for s in range(S):
            u = project_ball(u, iota)
            norms.append(float(np.linalg.norm(u)))
            for b in inner_order(config, n_i, i, r, t, S + s):
                u = u - rho * (oracle.hvp_g_yy(x, y, i, int(b), u) - oracle.grad_f_y(x, y, i))
        return InnerResult(y, u, y_errs, norms)

    for s in range(S):
        u = project_ball(u, iota)
        norms.append(float(np.linalg.norm(u)))
        for b in inner_order(config, n_i, i, r, t, s):
            b = int(b)
            gy = oracle.grad_g_y(x, y, i, b)
            hu = oracle.hvp_g_yy(x, y, i, b, u)
            fy = oracle.grad_f_y(x, y, i)
            y, u = y - gamma * gy, u - rho * (hu - fy)
        if y_ref is not None:
            y_errs.append(float(np.linalg.norm(y - y_ref)))
    return InnerResult(y, u, y_errs, norms)


def ccomp_inner(oracle, x, i, y, u, config: CondRunConfig, gamma, rho, iota, r=0, t=0) -> InnerResult:
    """``S`` moving-average inner epochs for outer example ``i`` at fixed ``x``::

    y <- (1 - gamma) y + gamma r(x; i, b)
    u <- (1 - rho) u + rho grad f(y; i)
    """
    n_i = oracle.n_inner(i)
    y, u = np.array(y, dtype=np.float64), np.array(u, dtype=np.float64)
    norms = []
    for s in range(config.inner_epochs):
        u = project_ball(u, iota)
        norms.append(float(np.linalg.norm(u)))
        for b in inner_order(config, n_i, i, r, t, s):
            rx = oracle.r(x, i, int(b))
            fy = oracle.grad_f_y(y, i)
            y, u = (1 - gamma) * y + gamma * rx, (1 - rho) * u + rho * fy
    return InnerResult(y, u, [], norms)


def _conditional_reference(oracle, tol):
    def ref(state):
        parts = hypergradient_parts_conditional(oracle, state.x, tol)
        loss = None
        if oracle.has_value_f:
            loss = float(np.mean([oracle.value_f(state.x, parts.ys[i], i) for i in range(oracle.m)]))
        return np.linalg.norm(parts.grad), loss, None, None

    return ref


def _ccomp_reference(oracle):
    def ref(state):
        total, losses = np.zeros(oracle.p), []
        for i in range(oracle.m):
            ybar = oracle._full_r(state.x, i)
            total += oracle._full_jvp_r(state.x, i, oracle._grad_f_y(ybar, i))
            if oracle.has_value_f:
                losses.append(oracle.value_f(ybar, i))
        return np.linalg.norm(total / oracle.m), (float(np.mean(losses)) if losses else None), None, None

    return ref


def _run_double_loop(oracle, x0, config, reference, name, inner, outer_step):
    x0 = np.array(x0, dtype=np.float64).reshape(-1)
    if x0.size != oracle.p:
        raise ValueError(f"x0 has length {x0.size}, problem has p = {oracle.p}")
    for i in range(oracle.m):
        if oracle.n_inner(i) < 1:
            raise ValueError(f"outer example {i} has an empty inner dataset")
    iota = config.rates.resolve_iota(oracle.meta)
    rec = Recorder(oracle, config, reference, name, iota)
    d, m = oracle.d, oracle.m
    state = IterateBO(x0, np.zeros(d), np.zeros(d))
    state.check_finite()
    cache = {}
    every = config.eval_interval or m
    rec.log(0, state)

    with oracle.tally(rec.counters):
        for r in range(config.epochs):
            if rec.should_stop():
                break
            xi = epoch_order(config, "xi", m, m, r)
            eta, gamma, rho = config.rates.at_epoch(r)
            for t in range(m):
                i = int(xi[t])
                if config.warm_start is WarmStart.CARRY and i in cache:
                    y0, u0 = cache[i]
                else:
                    y0, u0 = np.zeros(d), np.zeros(d)
                res = inner(oracle, state.x, i, y0, u0, config, gamma, rho, iota, r, t)
                rec.trace.boundary_u_norms.extend(res.boundary_u_norms)
                if config.warm_start is WarmStart.CARRY:
                    cache[i] = (res.y, res.u)
                new_x = state.x - eta * outer_step(oracle, state.x, i, res.y, res.u)
                rec.check((new_x, res.y, res.u), r, state)
                state = IterateBO(new_x, res.y, res.u)
                rec.step += 1
                if rec.step % every == 0:
                    rec.log(rec.step // m, state)
                if rec.should_stop():
                    break
    rec.log(rec.step // m, state)
    rec.trace.final = state
    return rec.trace


def _cbo_outer(oracle, x, i, y, u):
    return oracle.grad_f_x(x, y, i) - oracle.full_jvp_g_xy(x, y, i, u)


def _ccomp_outer(oracle, x, i, y, u):
    return oracle.full_jvp_r(x, i, u)


def wior_cbo(oracle, x0, config: CondRunConfig) -> RunTrace:
    """Conditional bilevel solver.

    After the inner loop for outer example ``i`` returns ``(y, u)``::

        x <- x - eta (grad_x f(x, y; i) - grad_xy g^(i)(x, y) u)

    where the mixed term is taken over the whole inner dataset of ``i``.
    One outer step costs ``S n_i + 1`` outer gradients, ``S n_i`` inner
    gradients, ``S n_i`` Hessian-vector products and one Jacobian-vector
    product on ``g^(i)``.
    """
    return _run_double_loop(
        oracle, x0, config, _conditional_reference(oracle, config.eval_tol), "wior_cbo", cbo_inner, _cbo_outer
    )


def wior_ccomp(oracle, x0, config: CondRunConfig) -> RunTrace:
    """Conditional compositional solver: moving-average inner loop, then
    ``x <- x - eta jvp_r^(i)(x, u)`` over the inner dataset of ``i``."""
    if config.two_phase:
        raise ValueError("two-phase mode applies to wior_cbo only")
    return _run_double_loop(oracle, x0, config, _ccomp_reference(oracle), "wior_ccomp", ccomp_inner, _ccomp_outer)


def inner_contraction(oracle, x, i, config: CondRunConfig, tol=TRACE_TOL) -> list:
    """``||y - y_x^(i)||`` after each of the ``S`` inner ``y`` epochs from ``y = 0``."""
    x = np.asarray(x, dtype=np.float64)
    iota = config.rates.resolve_iota(oracle.meta)
    y_ref = conditional_inner_solve(oracle, x, i, tol)
    _, gamma, rho = config.rates.at_epoch(0)
    res = cbo_inner(oracle, x, i, np.zeros(oracle.d), np.zeros(oracle.d), config, gamma, rho, iota, y_ref=y_ref)
    return res.y_errs


__all__ = [
    "CondRunConfig",
    "InnerResult",
    "WarmStart",
    "cbo_inner",
    "ccomp_inner",
    "inner_contraction",
    "theory_rates",
    "wior_cbo",
    "wior_ccomp",
]
