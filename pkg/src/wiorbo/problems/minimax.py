"""Quadratic minimax instances.

    f(x, y; i) = 1/2 x'P_i x + s_i'x + y'C_i x + e_i'y - 1/2 y'D_i y

With ``Dbar`` positive definite the inner maximiser is
``y_x = Dbar^{-1}(Cbar x + ebar)`` and the saddle point follows from one
block linear solve.
"""

from __future__ import annotations

import numpy as np

from ..core import ProblemMeta
from ..oracle import MinimaxOracle


class QuadMinimax(MinimaxOracle):
    kind = "quad_minimax"

    def __init__(self, P, s, C, e, D):
        super().__init__()
        self.P = np.asarray(P, dtype=np.float64)
        self.s = np.asarray(s, dtype=np.float64)
        self.C = np.asarray(C, dtype=np.float64)
        self.e = np.asarray(e, dtype=np.float64)
        self.D = np.asarray(D, dtype=np.float64)
        self.m, self.d, self.p = self.C.shape
        self.P_bar, self.s_bar = self.P.mean(0), self.s.mean(0)
        self.C_bar, self.e_bar, self.D_bar = self.C.mean(0), self.e.mean(0), self.D.mean(0)
        mu = float(np.linalg.eigvalsh(self.D_bar)[0])
        if mu <= 0:
            raise ValueError("mean D must be positive definite")
        L = max(
            np.linalg.norm(np.block([[self.P[i], self.C[i].T], [self.C[i], -self.D[i]]]), 2) for i in range(self.m)
        )
        self.inner_lipschitz = float(np.linalg.eigvalsh(self.D_bar)[-1])
        self.meta = ProblemMeta(mu=mu, L=max(float(L), mu), C_f=1.0)

    @classmethod
    def bilinear(cls):
        """``f(x, y) = x y - y^2 / 2``: one example, saddle at the origin."""
        return cls(P=[[[0.0]]], s=[[0.0]], C=[[[1.0]]], e=[[0.0]], D=[[[1.0]]])

    def arrays(self) -> dict:
        return {"P": self.P, "s": self.s, "C": self.C, "e": self.e, "D": self.D}

    def params(self) -> dict:
        return {}

    def _grad_f_x(self, x, y, i):
        return self.P[i] @ x + self.s[i] + self.C[i].T @ y

    def _grad_f_y(self, x, y, i):
        return self.C[i] @ x + self.e[i] - self.D[i] @ y

    def _value_f(self, x, y, i):
        return float(0.5 * x @ self.P[i] @ x + self.s[i] @ x + y @ self.C[i] @ x + self.e[i] @ y - 0.5 * y @ self.D[i] @ y)

    def _full_grad_f_x(self, x, y):
        return self.P_bar @ x + self.s_bar + self.C_bar.T @ y

    def _full_grad_f_y(self, x, y):
        return self.C_bar @ x + self.e_bar - self.D_bar @ y

    def y_star_of(self, x):
        return np.linalg.solve(self.D_bar, self.C_bar @ x + self.e_bar)

    def hypergradient(self, x):
        return self._full_grad_f_x(x, self.y_star_of(x))

    def saddle(self):
        Dinv_C = np.linalg.solve(self.D_bar, self.C_bar)
        Dinv_e = np.linalg.solve(self.D_bar, self.e_bar)
        lhs = self.P_bar + self.C_bar.T @ Dinv_C
        x = np.linalg.solve(lhs, -self.s_bar - self.C_bar.T @ Dinv_e)
        return x, self.y_star_of(x)


def gen_quad_minimax(p, d, m, seed=0, hetero=0.5, shared_saddle=True):
    """Random convex-strongly-concave instance; returns ``(oracle, (x*, y*))``.

    With ``shared_saddle`` every example is centred on the same point, so
    the per-example gradients vanish together at the saddle; otherwise the
    linear terms differ between examples.
    """
    if min(p, d, m) < 1:
        raise ValueError("p, d and m must be >= 1")
    rng = np.random.default_rng(int(seed))

    def spd(k, lo, count):
        base = rng.standard_normal((k, k))
        base = base @ base.T / k + lo * np.eye(k)
        pert = rng.standard_normal((count, k, k))
        pert = 0.5 * (pert + np.swapaxes(pert, 1, 2))
        pert -= pert.mean(0)
        scale = max(np.linalg.norm(q, 2) for q in pert) if count > 1 else 1.0
        return base + (hetero * 0.5 * lo / scale) * pert

    P = spd(p, 0.5, m)
    D = spd(d, 1.0, m)
    C = rng.standard_normal((d, p)) / np.sqrt(p) + hetero * 0.3 * rng.standard_normal((m, d, p))
    if shared_saddle:
        xs, ys = rng.standard_normal(p), rng.standard_normal(d)
        # gradients of every example vanish at (xs, ys)
        s = -(np.einsum("ipq,q->ip", P, xs) + np.einsum("idp,d->ip", C, ys))
        e = -(np.einsum("idp,p->id", C, xs) - np.einsum("ide,e->id", D, ys))
    else:
        s = rng.standard_normal(p) + hetero * rng.standard_normal((m, p))
        e = rng.standard_normal(d) + hetero * rng.standard_normal((m, d))
    oracle = QuadMinimax(P, s, C, e, D)
    return oracle, oracle.saddle()
