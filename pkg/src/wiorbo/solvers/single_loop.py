"""Single-loop solvers for bilevel, compositional and minimax problems.

Each step reads every stochastic derivative at the pre-step state and then
applies all updates at once. Orders are redrawn at the start of every
epoch (shuffle-once reuses one permutation per dataset), and ``u`` is
projected onto the ``iota`` ball at each epoch start.
"""

from __future__ import annotations

import numpy as np

from ..core import IterateBO, plan_epoch, project_ball
from ..oracle import (
    exact_hypergradient_comp,
    hypergradient_parts,
    minimax_inner_solve,
    outer_value_comp,
)
from .trace import Recorder, RunConfig, RunTrace, epoch_order


def _check_dims(oracle, init: IterateBO):
    if init.p != oracle.p or init.d != oracle.d:
        raise ValueError(f"initial state has (p, d) = ({init.p}, {init.d}), problem has ({oracle.p}, {oracle.d})")


def _interval(config, epoch_len):
    return config.eval_interval or epoch_len


def _bilevel_reference(oracle, tol):
    def ref(state):
        parts = hypergradient_parts(oracle, state.x, tol)
        loss = oracle.full_value_f(state.x, parts.y) if oracle.has_value_f else None
        return (
            np.linalg.norm(parts.grad),
            loss,
            float(np.linalg.norm(state.y - parts.y)),
            float(np.linalg.norm(state.u - parts.u)),
        )

    return ref


def wior_bo(oracle, init: IterateBO, config: RunConfig) -> RunTrace:
    """Single-loop bilevel solver sharing one step index across both datasets.

    Per step with ``a = xi[t]`` and ``b = zeta[t]``::

        y <- y - gamma * grad_y g(x, y; b)
        u <- u - rho * (hvp_yy g(x, y; b) u - grad_y f(x, y; a))
        x <- x - eta * (grad_x f(x, y; a) - jvp_xy g(x, y; b) u)

    Each step costs two outer gradients and one each of the inner gradient,
    Hessian-vector and Jacobian-vector products.
    """
    _check_dims(oracle, init)
    plan = plan_epoch(oracle.m, oracle.n)
    iota = config.rates.resolve_iota(oracle.meta)
    rec = Recorder(oracle, config, _bilevel_reference(oracle, config.eval_tol), "wior_bo", iota)
    state = init.copy()
    state.check_finite()
    every = _interval(config, plan.epoch_len)
    rec.log(0, state)

    with oracle.tally(rec.counters):
        for r in range(config.epochs):
            if rec.should_stop():
                break
            xi = epoch_order(config, "xi", oracle.m, plan.epoch_len, r)
            zeta = epoch_order(config, "zeta", oracle.n, plan.epoch_len, r)
            eta, gamma, rho = config.rates.at_epoch(r)
            state.u = project_ball(state.u, iota)
            rec.boundary(state.u)
            for t in range(plan.epoch_len):
                x, y, u = state.x, state.y, state.u
                a, b = int(xi[t]), int(zeta[t])
                gy = oracle.grad_g_y(x, y, b)
                fy = oracle.grad_f_y(x, y, a)
                hu = oracle.hvp_g_yy(x, y, b, u)
                fx = oracle.grad_f_x(x, y, a)
                ju = oracle.jvp_g_xy(x, y, b, u)
                new = (x - eta * (fx - ju), y - gamma * gy, u - rho * (hu - fy))
                rec.check(new, r, state)
                state = IterateBO(*new)
                rec.step += 1
                if rec.step % every == 0:
                    rec.log(rec.step // plan.epoch_len, state)
                if rec.should_stop():
                    break
    rec.log(rec.step // plan.epoch_len, state)
    rec.trace.final = state
    return rec.trace


def _comp_reference(oracle):
    def ref(state):
        ybar = oracle._full_r(state.x)
        ubar = oracle._full_grad_f_y(ybar)
        grad = exact_hypergradient_comp(oracle, state.x)
        loss = outer_value_comp(oracle, state.x) if oracle.has_value_f else None
        return np.linalg.norm(grad), loss, float(np.linalg.norm(state.y - ybar)), float(np.linalg.norm(state.u - ubar))

    return ref


def wior_comp(oracle, init: IterateBO, config: RunConfig) -> RunTrace:
    """Single-loop compositional solver with moving-average inner tracking.

    Per step with ``a = xi[t]`` and ``b = zeta[t]``::

        y <- (1 - gamma) y + gamma r(x; b)
        u <- (1 - rho) u + rho grad f(y; a)
        x <- x - eta jvp_r(x; b, u)
    """
    _check_dims(oracle, init)
    plan = plan_epoch(oracle.m, oracle.n)
    iota = config.rates.resolve_iota(oracle.meta)
    rec = Recorder(oracle, config, _comp_reference(oracle), "wior_comp", iota)
    state = init.copy()
    state.check_finite()
    every = _interval(config, plan.epoch_len)
    rec.log(0, state)

    with oracle.tally(rec.counters):
        for r in range(config.epochs):
            if rec.should_stop():
                break
            xi = epoch_order(config, "xi", oracle.m, plan.epoch_len, r)
            zeta = epoch_order(config, "zeta", oracle.n, plan.epoch_len, r)
            eta, gamma, rho = config.rates.at_epoch(r)
            state.u = project_ball(state.u, iota)
            rec.boundary(state.u)
            for t in range(plan.epoch_len):
                x, y, u = state.x, state.y, state.u
                a, b = int(xi[t]), int(zeta[t])
                rx = oracle.r(x, b)
                fy = oracle.grad_f_y(y, a)
                jx = oracle.jvp_r(x, b, u)
                new = (x - eta * jx, (1 - gamma) * y + gamma * rx, (1 - rho) * u + rho * fy)
                rec.check(new, r, state)
                state = IterateBO(*new)
                rec.step += 1
                if rec.step % every == 0:
                    rec.log(rec.step // plan.epoch_len, state)
                if rec.should_stop():
                    break
    rec.log(rec.step // plan.epoch_len, state)
    rec.trace.final = state
    return rec.trace


def _minimax_reference(oracle, tol):
    def ref(state):
        y_x = minimax_inner_solve(oracle, state.x, tol)
        grad = oracle._full_grad_f_x(state.x, y_x)
        loss = None
        if oracle.has_value_f:
            loss = float(np.mean([oracle.value_f(state.x, y_x, i) for i in range(oracle.m)]))
        return np.linalg.norm(grad), loss, float(np.linalg.norm(state.y - y_x)), None

    return ref


def wior_minimax(oracle, init, config: RunConfig) -> RunTrace:
    """Stochastic gradient descent-ascent over one dataset of ``m`` examples.

    Per step with ``a = xi[t]``, both derivatives read the pre-step ``y``::

        y <- y + gamma grad_y f(x, y; a)
        x <- x - eta grad_x f(x, y; a)

    ``init`` is an ``(x, y)`` pair or an IterateBO. The returned final state
    carries ``u = 0`` since this solver has no linear-system iterate.
    """
    if isinstance(init, IterateBO):
        x0, y0 = init.x, init.y
    else:
        x0, y0 = init
    state = IterateBO(x0, y0, np.zeros(np.size(y0)))
    _check_dims(oracle, state)
    state.check_finite()
    m = oracle.m
    rec = Recorder(oracle, config, _minimax_reference(oracle, config.eval_tol), "wior_minimax")
    every = _interval(config, m)
    rec.log(0, state)

    with oracle.tally(rec.counters):
        for r in range(config.epochs):
            if rec.should_stop():
                break
            xi = epoch_order(config, "xi", m, m, r)
            eta, gamma, _ = config.rates.at_epoch(r)
            for t in range(m):
                x, y = state.x, state.y
                a = int(xi[t])
                gy = oracle.grad_f_y(x, y, a)
                gx = oracle.grad_f_x(x, y, a)
                new = (x - eta * gx, y + gamma * gy)
                rec.check(new, r, state)
                state = IterateBO(new[0], new[1], state.u)
                rec.step += 1
                if rec.step % every == 0:
                    rec.log(rec.step // m, state)
                if rec.should_stop():
                    break
    rec.log(rec.step // m, state)
    rec.trace.final = state
    return rec.trace
