"""Linear compositional instances.

    r(x; j) = M_j x + o_j,        f(y; i) = 1/2 ||y - a_i||^2

The outer objective ``mean_i 1/2 ||Mbar x + obar - a_i||^2`` is minimised by
the normal equations ``Mbar'Mbar x = Mbar'(abar - obar)``. The conditional
variant gives every outer example ``i`` its own inner set ``{M_ij, o_ij}``.
"""

from __future__ import annotations

import numpy as np

from ..core import ProblemMeta
from ..oracle import CompositionalOracle, ConditionalCompositionalOracle


def _grad_bound(L, o, a, radius):
    # ||grad f(y)|| = ||y - a_i|| for y = r(x) with ||x|| <= radius
    return float(np.sqrt(L) * radius + np.max(np.linalg.norm(o, axis=1)) + np.max(np.linalg.norm(a, axis=1)))


class LinearComp(CompositionalOracle):
    kind = "linear_comp"

    def __init__(self, M, o, a, state_radius=10.0):
        super().__init__()
        self.state_radius = float(state_radius)
        self.M = np.asarray(M, dtype=np.float64)
        self.o = np.asarray(o, dtype=np.float64)
        self.a = np.asarray(a, dtype=np.float64)
        self.n, self.d, self.p = self.M.shape
        self.m = self.a.shape[0]
        self.M_bar, self.o_bar, self.a_bar = self.M.mean(0), self.o.mean(0), self.a.mean(0)
        if np.linalg.matrix_rank(self.M_bar) < self.p:
            raise ValueError("mean M must have full column rank")
        L = max(1.0, max(np.linalg.norm(Mj, 2) ** 2 for Mj in self.M))
        self.meta = ProblemMeta(mu=1.0, L=float(L), C_f=_grad_bound(L, self.o, self.a, self.state_radius))

    def arrays(self) -> dict:
        return {"M": self.M, "o": self.o, "a": self.a}

    def params(self) -> dict:
        return {"state_radius": self.state_radius}

    def _r(self, x, j):
        return self.M[j] @ x + self.o[j]

    def _jvp_r(self, x, j, v):
        return self.M[j].T @ v

    def _grad_f_y(self, y, i):
        return y - self.a[i]

    def _value_f(self, y, i):
        diff = y - self.a[i]
        return 0.5 * float(diff @ diff)

    def _full_r(self, x):
        return self.M_bar @ x + self.o_bar

    def _full_jvp_r(self, x, v):
        return self.M_bar.T @ v

    def _full_grad_f_y(self, y):
        return y - self.a_bar

    def x_star(self):
        return np.linalg.lstsq(self.M_bar, self.a_bar - self.o_bar, rcond=None)[0]

    def hypergradient(self, x):
        return self.M_bar.T @ (self.M_bar @ x + self.o_bar - self.a_bar)


class ConditionalLinearComp(ConditionalCompositionalOracle):
    kind = "linear_ccomp"

    def __init__(self, M, o, a, state_radius=10.0):
        super().__init__()
        self.state_radius = float(state_radius)
        self.M = [np.asarray(Mi, dtype=np.float64) for Mi in M]
        self.o = [np.asarray(oi, dtype=np.float64) for oi in o]
        self.a = np.asarray(a, dtype=np.float64)
        self.m, self.d = self.a.shape
        self.p = self.M[0].shape[2]
        self.M_bar = np.array([Mi.mean(0) for Mi in self.M])
        self.o_bar = np.array([oi.mean(0) for oi in self.o])
        gram = np.einsum("idp,idq->pq", self.M_bar, self.M_bar)
        if np.linalg.matrix_rank(gram) < self.p:
            raise ValueError("sum of Mbar_i' Mbar_i must be nonsingular")
        L = max(1.0, max(np.linalg.norm(Mij, 2) ** 2 for Mi in self.M for Mij in Mi))
        self.meta = ProblemMeta(mu=1.0, L=float(L), C_f=_grad_bound(L, np.concatenate(self.o), self.a, self.state_radius))

    def n_inner(self, i):
        return self.M[i].shape[0]

    def arrays(self) -> dict:
        out = {"a": self.a}
        for i in range(self.m):
            out[f"M_{i}"] = self.M[i]
            out[f"o_{i}"] = self.o[i]
        return out

    def params(self) -> dict:
        return {"state_radius": self.state_radius}

    def _r(self, x, i, j):
        return self.M[i][j] @ x + self.o[i][j]

    def _jvp_r(self, x, i, j, v):
        return self.M[i][j].T @ v

    def _grad_f_y(self, y, i):
        return y - self.a[i]

    def _value_f(self, y, i):
        diff = y - self.a[i]
        return 0.5 * float(diff @ diff)

    def _full_r(self, x, i):
        return self.M_bar[i] @ x + self.o_bar[i]

    def _full_jvp_r(self, x, i, v):
        return self.M_bar[i].T @ v

    def x_star(self):
        gram = np.einsum("idp,idq->pq", self.M_bar, self.M_bar)
        rhs = np.einsum("idp,id->p", self.M_bar, self.a - self.o_bar)
        return np.linalg.solve(gram, rhs)

    def hypergradient(self, x):
        resid = np.einsum("idp,p->id", self.M_bar, x) + self.o_bar - self.a
        return np.einsum("idp,id->p", self.M_bar, resid) / self.m


def gen_linear_comp(p, d, m, n, seed=0, conditional=False, hetero=0.3, offsets=True, interpolate=False):
    """Random linear-compositional instance; returns ``(oracle, x_star)``.

    ``n`` is the inner dataset size, or for the conditional variant the
    per-example size (an int or a sequence of length ``m``). With
    ``interpolate`` the offsets are chosen so every ``r(x*; j)`` equals the
    outer target, which makes every stochastic update vanish at ``x*``.
    """
    if min(p, d, m) < 1:
        raise ValueError("p, d and m must be >= 1")
    if d < p:
        raise ValueError("d >= p is needed for a unique minimiser")
    rng = np.random.default_rng(int(seed))
    Q, _ = np.linalg.qr(rng.standard_normal((d, p)))
    base = Q * rng.uniform(1.0, 2.0, size=p) / np.sqrt(2.0)
    a = rng.standard_normal(d) + hetero * rng.standard_normal((m, d))
    x_target = rng.standard_normal(p)

    def inner_set(count, target):
        M = base + hetero * rng.standard_normal((count, d, p)) / np.sqrt(d)
        if interpolate:
            o = target - M @ x_target
        elif offsets:
            o = rng.standard_normal(d) + hetero * rng.standard_normal((count, d))
        else:
            o = np.zeros((count, d))
        return M, o

    if not conditional:
        if int(n) < 1:
            raise ValueError("n must be >= 1")
        if interpolate:
            a = np.tile(a.mean(axis=0), (m, 1))
        M, o = inner_set(int(n), a[0])
        oracle = LinearComp(M, o, a)
    else:
        sizes = [int(n)] * m if np.isscalar(n) else [int(k) for k in n]
        if len(sizes) != m or min(sizes) < 1:
            raise ValueError("every n_i must be >= 1 and there must be m of them")
        pairs = [inner_set(k, a[i]) for i, k in enumerate(sizes)]
        oracle = ConditionalLinearComp([P[0] for P in pairs], [P[1] for P in pairs], a)
    return oracle, oracle.x_star()
