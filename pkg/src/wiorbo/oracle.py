"""Per-example derivative contracts and the exact reference computations.

A problem subclasses one of the oracle bases and implements the underscored
per-example methods. The public methods add the oracle-call tallies:
``grad_f_x``/``grad_f_y`` count toward ``gc_f``, ``grad_g_y`` toward
``gc_g``, ``hvp_g_yy`` toward ``hv_g`` and ``jvp_g_xy`` toward ``jv_g``.
A full-batch call over ``n`` examples adds ``n``. Conditional oracles are
the exception for calls on a whole per-example inner objective
``g^(i)``: one such call adds 1.

Reference hypergradients solve the inner problem by full-batch gradient
descent with stepsize ``1/L`` (``inner_lipschitz`` when the problem gives
the smoothness of ``g(x, .)`` alone, else ``meta.L``) and obtain ``u_x`` by conjugate gradients on
Hessian-vector products, so no Hessian is ever formed.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .core import OracleCounters, ProblemMeta
from .errors import IllConditioningError, NoConvergenceError, UnsupportedProblemError

REFERENCE_TOL = 1e-10
TRACE_TOL = 1e-8


class _Counted:
    meta: ProblemMeta | None = None
    inner_lipschitz: float | None = None

    def __init__(self):
        self.counters = OracleCounters()

    @contextmanager
    def tally(self, counters: OracleCounters):
        """Route every evaluation inside the block to ``counters``."""
        prev = self.counters
        self.counters = counters
        try:
            yield counters
        finally:
            self.counters = prev

    def _mean(self, fn, count):
        return np.mean([fn(k) for k in range(count)], axis=0)


class BilevelOracle(_Counted):
    """Finite-sum bilevel problem: ``m`` outer examples, ``n`` inner examples."""

    p: int
    d: int
    m: int
    n: int

    # per-example hooks ----------------------------------------------------
    def _grad_f_x(self, x, y, i):
        raise NotImplementedError

    def _grad_f_y(self, x, y, i):
        raise NotImplementedError

    def _grad_g_y(self, x, y, j):
        raise NotImplementedError

    def _hvp_g_yy(self, x, y, j, v):
        raise NotImplementedError

    def _jvp_g_xy(self, x, y, j, v):
        raise NotImplementedError

    def _value_f(self, x, y, i):
        raise UnsupportedProblemError(f"{type(self).__name__} has no value_f")

    def _value_g(self, x, y, j):
        raise UnsupportedProblemError(f"{type(self).__name__} has no value_g")

    # full-batch hooks; subclasses override with vectorised versions
    def _full_grad_f_x(self, x, y):
        return self._mean(lambda i: self._grad_f_x(x, y, i), self.m)

    def _full_grad_f_y(self, x, y):
        return self._mean(lambda i: self._grad_f_y(x, y, i), self.m)

    def _full_grad_g_y(self, x, y):
        return self._mean(lambda j: self._grad_g_y(x, y, j), self.n)

    def _full_hvp_g_yy(self, x, y, v):
        return self._mean(lambda j: self._hvp_g_yy(x, y, j, v), self.n)

    def _full_jvp_g_xy(self, x, y, v):
        return self._mean(lambda j: self._jvp_g_xy(x, y, j, v), self.n)

    def _full_value_f(self, x, y):
        return float(np.mean([self._value_f(x, y, i) for i in range(self.m)]))

    @property
    def has_value_f(self) -> bool:
        return type(self)._value_f is not BilevelOracle._value_f

    # counted API ------------------------------------------------------------
    def grad_f_x(self, x, y, i):
        self.counters.gc_f += 1
        return self._grad_f_x(x, y, i)

    def grad_f_y(self, x, y, i):
        self.counters.gc_f += 1
        return self._grad_f_y(x, y, i)

    def grad_g_y(self, x, y, j):
        self.counters.gc_g += 1
        return self._grad_g_y(x, y, j)

    def hvp_g_yy(self, x, y, j, v):
        self.counters.hv_g += 1
        return self._hvp_g_yy(x, y, j, v)

    def jvp_g_xy(self, x, y, j, v):
        self.counters.jv_g += 1
        return self._jvp_g_xy(x, y, j, v)

    def full_grad_f_x(self, x, y):
        self.counters.gc_f += self.m
        return self._full_grad_f_x(x, y)

    def full_grad_f_y(self, x, y):
        self.counters.gc_f += self.m
        return self._full_grad_f_y(x, y)

    def full_grad_g_y(self, x, y):
        self.counters.gc_g += self.n
        return self._full_grad_g_y(x, y)

    def full_hvp_g_yy(self, x, y, v):
        self.counters.hv_g += self.n
        return self._full_hvp_g_yy(x, y, v)

    def full_jvp_g_xy(self, x, y, v):
        self.counters.jv_g += self.n
        return self._full_jvp_g_xy(x, y, v)

    def value_f(self, x, y, i):
        return self._value_f(x, y, i)

    def full_value_f(self, x, y):
        return self._full_value_f(x, y)

    def value_g(self, x, y, j):
        return self._value_g(x, y, j)


class ConditionalOracle(_Counted):
    """Each outer example ``i`` owns an inner dataset of ``n_inner(i)`` examples."""

    p: int
    d: int
    m: int

    def n_inner(self, i: int) -> int:
        raise NotImplementedError

    def _grad_f_x(self, x, y, i):
        raise NotImplementedError

    def _grad_f_y(self, x, y, i):
        raise NotImplementedError

    def _grad_g_y(self, x, y, i, j):
        raise NotImplementedError

    def _hvp_g_yy(self, x, y, i, j, v):
        raise NotImplementedError

    def _jvp_g_xy(self, x, y, i, j, v):
        raise NotImplementedError

    def _value_f(self, x, y, i):
        raise UnsupportedProblemError(f"{type(self).__name__} has no value_f")

    def _full_grad_g_y(self, x, y, i):
        return self._mean(lambda j: self._grad_g_y(x, y, i, j), self.n_inner(i))

    def _full_hvp_g_yy(self, x, y, i, v):
        return self._mean(lambda j: self._hvp_g_yy(x, y, i, j, v), self.n_inner(i))

    def _full_jvp_g_xy(self, x, y, i, v):
        return self._mean(lambda j: self._jvp_g_xy(x, y, i, j, v), self.n_inner(i))

    @property
    def has_value_f(self) -> bool:
        return type(self)._value_f is not ConditionalOracle._value_f

    def grad_f_x(self, x, y, i):
        self.counters.gc_f += 1
        return self._grad_f_x(x, y, i)

    def grad_f_y(self, x, y, i):
        self.counters.gc_f += 1
        return self._grad_f_y(x, y, i)

    def grad_g_y(self, x, y, i, j):
        self.counters.gc_g += 1
        return self._grad_g_y(x, y, i, j)

    def hvp_g_yy(self, x, y, i, j, v):
        self.counters.hv_g += 1
        return self._hvp_g_yy(x, y, i, j, v)

    def jvp_g_xy(self, x, y, i, j, v):
        self.counters.jv_g += 1
        return self._jvp_g_xy(x, y, i, j, v)

    # calls on the whole inner objective g^(i) count once
    def full_grad_g_y(self, x, y, i):
        self.counters.gc_g += 1
        return self._full_grad_g_y(x, y, i)

    def full_hvp_g_yy(self, x, y, i, v):
        self.counters.hv_g += 1
        return self._full_hvp_g_yy(x, y, i, v)

    def full_jvp_g_xy(self, x, y, i, v):
        self.counters.jv_g += 1
        return self._full_jvp_g_xy(x, y, i, v)

    def value_f(self, x, y, i):
        return self._value_f(x, y, i)


class CompositionalOracle(_Counted):
    """``h(x) = mean_i f(mean_j r(x; j); i)``.

    ``jvp_r(x, j, v)`` returns ``grad r(x; j) @ v`` (a length-``p`` vector).
    """

    p: int
    d: int
    m: int
    n: int

    def _r(self, x, j):
        raise NotImplementedError

    def _jvp_r(self, x, j, v):
        raise NotImplementedError

    def _grad_f_y(self, y, i):
        raise NotImplementedError

    def _value_f(self, y, i):
        raise UnsupportedProblemError(f"{type(self).__name__} has no value_f")

    def _full_r(self, x):
        return self._mean(lambda j: self._r(x, j), self.n)

    def _full_jvp_r(self, x, v):
        return self._mean(lambda j: self._jvp_r(x, j, v), self.n)

    def _full_grad_f_y(self, y):
        return self._mean(lambda i: self._grad_f_y(y, i), self.m)

    @property
    def has_value_f(self) -> bool:
        return type(self)._value_f is not CompositionalOracle._value_f

    def r(self, x, j):
        self.counters.gc_g += 1
        return self._r(x, j)

    def jvp_r(self, x, j, v):
        self.counters.jv_g += 1
        return self._jvp_r(x, j, v)

    def grad_f_y(self, y, i):
        self.counters.gc_f += 1
        return self._grad_f_y(y, i)

    def full_r(self, x):
        self.counters.gc_g += self.n
        return self._full_r(x)

    def full_jvp_r(self, x, v):
        self.counters.jv_g += self.n
        return self._full_jvp_r(x, v)

    def full_grad_f_y(self, y):
        self.counters.gc_f += self.m
        return self._full_grad_f_y(y)

    def value_f(self, y, i):
        return self._value_f(y, i)


class ConditionalCompositionalOracle(_Counted):
    """``h(x) = mean_i f(mean_j r(x; i, j); i)`` with a private inner set per ``i``."""

    p: int
    d: int
    m: int

    def n_inner(self, i: int) -> int:
        raise NotImplementedError

    def _r(self, x, i, j):
        raise NotImplementedError

    def _jvp_r(self, x, i, j, v):
        raise NotImplementedError

    def _grad_f_y(self, y, i):
        raise NotImplementedError

    def _value_f(self, y, i):
        raise UnsupportedProblemError(f"{type(self).__name__} has no value_f")

    def _full_r(self, x, i):
        return self._mean(lambda j: self._r(x, i, j), self.n_inner(i))

    def _full_jvp_r(self, x, i, v):
        return self._mean(lambda j: self._jvp_r(x, i, j, v), self.n_inner(i))

    @property
    def has_value_f(self) -> bool:
        return type(self)._value_f is not ConditionalCompositionalOracle._value_f

    def r(self, x, i, j):
        self.counters.gc_g += 1
        return self._r(x, i, j)

    def jvp_r(self, x, i, j, v):
        self.counters.jv_g += 1
        return self._jvp_r(x, i, j, v)

    def grad_f_y(self, y, i):
        self.counters.gc_f += 1
        return self._grad_f_y(y, i)

    def full_r(self, x, i):
        self.counters.gc_g += 1
        return self._full_r(x, i)

    def full_jvp_r(self, x, i, v):
        self.counters.jv_g += 1
        return self._full_jvp_r(x, i, v)

    def value_f(self, y, i):
        return self._value_f(y, i)


class MinimaxOracle(_Counted):
    """``min_x mean_i max_y f(x, y; i)`` with ``-f`` strongly concave in ``y``."""

    p: int
    d: int
    m: int

    def _grad_f_x(self, x, y, i):
        raise NotImplementedError

    def _grad_f_y(self, x, y, i):
        raise NotImplementedError

    def _value_f(self, x, y, i):
        raise UnsupportedProblemError(f"{type(self).__name__} has no value_f")

    def _full_grad_f_x(self, x, y):
        return self._mean(lambda i: self._grad_f_x(x, y, i), self.m)

    def _full_grad_f_y(self, x, y):
        return self._mean(lambda i: self._grad_f_y(x, y, i), self.m)

    @property
    def has_value_f(self) -> bool:
        return type(self)._value_f is not MinimaxOracle._value_f

    def grad_f_x(self, x, y, i):
        self.counters.gc_f += 1
        return self._grad_f_x(x, y, i)

    def grad_f_y(self, x, y, i):
        self.counters.gc_f += 1
        return self._grad_f_y(x, y, i)

    def full_grad_f_x(self, x, y):
        self.counters.gc_f += self.m
        return self._full_grad_f_x(x, y)

    def full_grad_f_y(self, x, y):
        self.counters.gc_f += self.m
        return self._full_grad_f_y(x, y)

    def value_f(self, x, y, i):
        return self._value_f(x, y, i)


class ConditionalView(ConditionalOracle):
    """A bilevel oracle seen as a conditional problem with a single outer example.

    The lone outer example carries the full-batch outer objective and the
    inner dataset is the original one.
    """

    def __init__(self, base: BilevelOracle):
        super().__init__()
        self.base = base
        self.p, self.d, self.m = base.p, base.d, 1
        self.meta = base.meta

    def n_inner(self, i):
        return self.base.n

    def _grad_f_x(self, x, y, i):
        return self.base._full_grad_f_x(x, y)

    def _grad_f_y(self, x, y, i):
        return self.base._full_grad_f_y(x, y)

    def _grad_g_y(self, x, y, i, j):
        return self.base._grad_g_y(x, y, j)

    def _hvp_g_yy(self, x, y, i, j, v):
        return self.base._hvp_g_yy(x, y, j, v)

    def _jvp_g_xy(self, x, y, i, j, v):
        return self.base._jvp_g_xy(x, y, j, v)

    def _full_grad_g_y(self, x, y, i):
        return self.base._full_grad_g_y(x, y)

    def _full_hvp_g_yy(self, x, y, i, v):
        return self.base._full_hvp_g_yy(x, y, v)

    def _full_jvp_g_xy(self, x, y, i, v):
        return self.base._full_jvp_g_xy(x, y, v)

    def _value_f(self, x, y, i):
        return self.base._full_value_f(x, y)


# -- numerical kernels -----------------------------------------------------------


def _gradient_descent(grad, y0, step, tol, max_iters):
    y = np.array(y0, dtype=np.float64)
    g = grad(y)
    res = float(np.linalg.norm(g))
    # far from the origin the residual bottoms out at roundoff of the gradient terms
    tol = max(tol, 64 * np.finfo(np.float64).eps * res)
    it = 0
    while res > tol:
        if it >= max_iters:
            raise NoConvergenceError(f"inner solve did not reach tol={tol:g} in {max_iters} iterations", res)
        y = y - step * g
        g = grad(y)
        res = float(np.linalg.norm(g))
        it += 1
    return y


def conjugate_gradient(matvec, b, tol, x0=None, max_iters=None):
    """Solve ``A u = b`` for symmetric positive definite ``A`` given only ``matvec``.

    Raises IllConditioningError when the residual fails to improve for
    ``len(b)`` consecutive iterations or the curvature is non-positive.
    """
    b = np.asarray(b, dtype=np.float64)
    d = b.size
    u = np.zeros(d) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - matvec(u) if x0 is not None else b.copy()
    res = float(np.linalg.norm(r))
    if res <= tol:
        return u
    max_iters = max_iters or 50 * d + 100
    p = r.copy()
    rs = r @ r
    best, stale = res, 0
    for _ in range(max_iters):
        Ap = matvec(p)
        curv = p @ Ap
        if not curv > 0:
            raise IllConditioningError("non-positive curvature in the inner Hessian")
        a = rs / curv
        u = u + a * p
        r = r - a * Ap
        rs_new = r @ r
        res = float(np.sqrt(rs_new))
        if res <= tol:
            return u
        if res < best:
            best, stale = res, 0
        else:
            stale += 1
            if stale >= d:
                raise IllConditioningError(f"conjugate gradient stagnated at residual {res:.3e}")
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise IllConditioningError(f"conjugate gradient stopped at residual {res:.3e} after {max_iters} iterations")


def _smoothness(oracle) -> float:
    # smoothness of the inner objective in y alone when the problem states it
    L_inner = getattr(oracle, "inner_lipschitz", None)
    if L_inner is not None:
        return L_inner
    if oracle.meta is None:
        raise UnsupportedProblemError("the oracle carries no ProblemMeta; smoothness L is required")
    return oracle.meta.L


# -- bilevel references ------------------------------------------------------------


@dataclass(frozen=True)
class HypergradientParts:
    grad: np.ndarray
    y: np.ndarray
    u: np.ndarray


def exact_inner_solve(oracle: BilevelOracle, x, tol: float = REFERENCE_TOL, max_iters: int = 200_000, y0=None):
    """Minimise ``g(x, .)`` by full-batch gradient descent with stepsize ``1/L``."""
    x = np.asarray(x, dtype=np.float64)
    y0 = np.zeros(oracle.d) if y0 is None else y0
    return _gradient_descent(lambda y: oracle.full_grad_g_y(x, y), y0, 1.0 / _smoothness(oracle), tol, max_iters)


def hypergradient_parts(oracle: BilevelOracle, x, tol: float = REFERENCE_TOL) -> HypergradientParts:
    x = np.asarray(x, dtype=np.float64)
    y = exact_inner_solve(oracle, x, tol)
    b = oracle.full_grad_f_y(x, y)
    u = conjugate_gradient(lambda v: oracle.full_hvp_g_yy(x, y, v), b, tol)
    grad = oracle.full_grad_f_x(x, y) - oracle.full_jvp_g_xy(x, y, u)
    return HypergradientParts(grad, y, u)


def exact_hypergradient(oracle: BilevelOracle, x, tol: float = REFERENCE_TOL) -> np.ndarray:
    """``grad_x f(x, y_x) - grad_xy g(x, y_x) u_x`` with ``u_x`` solving ``H u = grad_y f``."""
    return hypergradient_parts(oracle, x, tol).grad


def outer_value(oracle: BilevelOracle, x, tol: float = REFERENCE_TOL) -> float:
    x = np.asarray(x, dtype=np.float64)
    return oracle.full_value_f(x, exact_inner_solve(oracle, x, tol))


def _central_differences(h, x, step):
    out = np.empty(x.size)
    for k in range(x.size):
        e = np.zeros(x.size)
        e[k] = step
        out[k] = (h(x + e) - h(x - e)) / (2 * step)
    return out


def fd_check_hypergradient(oracle, x, h_step: float = 1e-5, inner_tol: float = REFERENCE_TOL) -> float:
    """Max over coordinates of ``|fd_k - grad_k| / (1 + |grad_k|)`` using central differences of ``h``.

    Works for bilevel and conditional oracles that expose ``value_f``.
    """
    if not getattr(oracle, "has_value_f", False):
        raise UnsupportedProblemError(f"{type(oracle).__name__} does not provide value_f")
    x = np.asarray(x, dtype=np.float64)
    if isinstance(oracle, ConditionalOracle):
        grad = exact_hypergradient_conditional(oracle, x, inner_tol)
        h = lambda z: outer_value_conditional(oracle, z, inner_tol)  # noqa: E731
    else:
        grad = exact_hypergradient(oracle, x, inner_tol)
        h = lambda z: outer_value(oracle, z, inner_tol)  # noqa: E731
    fd = _central_differences(h, x, h_step)
    return float(np.max(np.abs(fd - grad) / (1.0 + np.abs(grad))))


# -- conditional references -----------------------------------------------------------


@dataclass(frozen=True)
class ConditionalParts:
    grad: np.ndarray
    ys: list
    us: list


def conditional_inner_solve(oracle: ConditionalOracle, x, i, tol=REFERENCE_TOL, max_iters=200_000):
    return _gradient_descent(
        lambda y: oracle.full_grad_g_y(x, y, i), np.zeros(oracle.d), 1.0 / _smoothness(oracle), tol, max_iters
    )


def hypergradient_parts_conditional(oracle: ConditionalOracle, x, tol=REFERENCE_TOL) -> ConditionalParts:
    x = np.asarray(x, dtype=np.float64)
    total = np.zeros(oracle.p)
    ys, us = [], []
    for i in range(oracle.m):
        y = conditional_inner_solve(oracle, x, i, tol)
        u = conjugate_gradient(lambda v: oracle.full_hvp_g_yy(x, y, i, v), oracle.grad_f_y(x, y, i), tol)
        total += oracle.grad_f_x(x, y, i) - oracle.full_jvp_g_xy(x, y, i, u)
        ys.append(y)
        us.append(u)
    return ConditionalParts(total / oracle.m, ys, us)


def exact_hypergradient_conditional(oracle: ConditionalOracle, x, tol: float = REFERENCE_TOL) -> np.ndarray:
    """Average over outer examples of the per-example hypergradients."""
    return hypergradient_parts_conditional(oracle, x, tol).grad


def outer_value_conditional(oracle: ConditionalOracle, x, tol: float = REFERENCE_TOL) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean([oracle.value_f(x, conditional_inner_solve(oracle, x, i, tol), i) for i in range(oracle.m)]))


# -- compositional and minimax references ------------------------------------------------


def exact_hypergradient_comp(oracle: CompositionalOracle, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return oracle.full_jvp_r(x, oracle.full_grad_f_y(oracle.full_r(x)))


def outer_value_comp(oracle: CompositionalOracle, x) -> float:
    y = oracle.full_r(np.asarray(x, dtype=np.float64))
    return float(np.mean([oracle.value_f(y, i) for i in range(oracle.m)]))


def exact_hypergradient_ccomp(oracle: ConditionalCompositionalOracle, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    total = np.zeros(oracle.p)
    for i in range(oracle.m):
        total += oracle.full_jvp_r(x, i, oracle.grad_f_y(oracle.full_r(x, i), i))
    return total / oracle.m


def outer_value_ccomp(oracle: ConditionalCompositionalOracle, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean([oracle.value_f(oracle.full_r(x, i), i) for i in range(oracle.m)]))


def minimax_inner_solve(oracle: MinimaxOracle, x, tol=REFERENCE_TOL, max_iters=200_000, y0=None):
    """Maximise ``f(x, .)`` by full-batch gradient ascent with stepsize ``1/L``."""
    x = np.asarray(x, dtype=np.float64)
    y0 = np.zeros(oracle.d) if y0 is None else y0
    return _gradient_descent(lambda y: -oracle.full_grad_f_y(x, y), y0, 1.0 / _smoothness(oracle), tol, max_iters)


def exact_hypergradient_minimax(oracle: MinimaxOracle, x, tol: float = REFERENCE_TOL) -> np.ndarray:
    """``grad_x f(x, y_x)``; the implicit term vanishes because ``grad_y f(x, y_x) = 0``."""
    x = np.asarray(x, dtype=np.float64)
    return oracle.full_grad_f_x(x, minimax_inner_solve(oracle, x, tol))
