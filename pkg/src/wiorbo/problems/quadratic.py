"""Quadratic bilevel instances with closed-form solution maps.

Inner:  g(x, y; j) = 1/2 y'A_j y + y'(B_j x + b_j)
Outer:  f(x, y; i) = 1/2 ||y - t_i||^2 + lam/2 ||x - s_i||^2

so ``y_x = -Abar^{-1}(Bbar x + bbar)`` and ``h`` is a strongly convex
quadratic in ``x``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ProblemMeta
from ..oracle import BilevelOracle


@dataclass(frozen=True)
class QuadraticSolution:
    x_star: np.ndarray
    y_star: np.ndarray
    h_star: float


class QuadraticBilevel(BilevelOracle):
    kind = "quadratic_bilevel"

    def __init__(self, A, B, b, t, s, lam=1.0, state_radius=10.0):
        super().__init__()
        self.A = np.asarray(A, dtype=np.float64)
        self.B = np.asarray(B, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        self.t = np.asarray(t, dtype=np.float64)
        self.s = np.asarray(s, dtype=np.float64)
        self.lam = float(lam)
        self.state_radius = float(state_radius)
        self.n, self.d, _ = self.A.shape
        self.p = self.B.shape[2]
        self.m = self.t.shape[0]
        if not np.allclose(self.A, np.swapaxes(self.A, 1, 2), rtol=0, atol=1e-14):
            raise ValueError("every A_j must be symmetric")

        self.A_bar = self.A.mean(axis=0)
        self.B_bar = self.B.mean(axis=0)
        self.b_bar = self.b.mean(axis=0)
        self.t_bar = self.t.mean(axis=0)
        self.s_bar = self.s.mean(axis=0)

        mu = min(np.linalg.eigvalsh(Aj)[0] for Aj in self.A)
        if mu <= 0:
            raise ValueError("inner problem is not strongly convex")
        joint = max(np.linalg.norm(self._joint_hessian(j), 2) for j in range(self.n))
        L = max(joint, 1.0, self.lam)
        # ||grad_y f|| = ||y - t_i|| on the ball ||y|| <= state_radius
        C_f = self.state_radius + float(np.max(np.linalg.norm(self.t, axis=1)))
        self.meta = ProblemMeta(mu=float(mu), L=float(L), C_f=C_f)
        self.inner_lipschitz = float(np.linalg.eigvalsh(self.A_bar)[-1])

    def _joint_hessian(self, j):
        H = np.zeros((self.p + self.d, self.p + self.d))
        H[: self.p, self.p :] = self.B[j].T
        H[self.p :, : self.p] = self.B[j]
        H[self.p :, self.p :] = self.A[j]
        return H

    def arrays(self) -> dict:
        return {"A": self.A, "B": self.B, "b": self.b, "t": self.t, "s": self.s}

    def params(self) -> dict:
        return {"lam": self.lam, "state_radius": self.state_radius}

    # per-example derivatives
    def _grad_f_x(self, x, y, i):
        return self.lam * (x - self.s[i])

    def _grad_f_y(self, x, y, i):
        return y - self.t[i]

    def _grad_g_y(self, x, y, j):
        return self.A[j] @ y + self.B[j] @ x + self.b[j]

    def _hvp_g_yy(self, x, y, j, v):
        return self.A[j] @ v

    def _jvp_g_xy(self, x, y, j, v):
        return self.B[j].T @ v

    def _value_f(self, x, y, i):
        dy = y - self.t[i]
        dx = x - self.s[i]
        return 0.5 * dy @ dy + 0.5 * self.lam * dx @ dx

    def _value_g(self, x, y, j):
        return 0.5 * y @ self.A[j] @ y + y @ (self.B[j] @ x + self.b[j])

    # full batch
    def _full_grad_f_x(self, x, y):
        return self.lam * (x - self.s_bar)

    def _full_grad_f_y(self, x, y):
        return y - self.t_bar

    def _full_grad_g_y(self, x, y):
        return self.A_bar @ y + self.B_bar @ x + self.b_bar

    def _full_hvp_g_yy(self, x, y, v):
        return self.A_bar @ v

    def _full_jvp_g_xy(self, x, y, v):
        return self.B_bar.T @ v

    # closed forms
    def y_star_of(self, x):
        return -np.linalg.solve(self.A_bar, self.B_bar @ x + self.b_bar)

    def u_star_of(self, x):
        return np.linalg.solve(self.A_bar, self.y_star_of(x) - self.t_bar)

    def hypergradient(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self.lam * (x - self.s_bar) - self.B_bar.T @ self.u_star_of(x)

    def h(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self._full_value_f(x, self.y_star_of(x))

    def _full_value_f(self, x, y):
        dy = y - self.t
        dx = x - self.s
        return float(0.5 * np.mean(np.sum(dy * dy, axis=1)) + 0.5 * self.lam * np.mean(np.sum(dx * dx, axis=1)))

    def solution(self) -> QuadraticSolution:
        J = -np.linalg.solve(self.A_bar, self.B_bar)
        c = -np.linalg.solve(self.A_bar, self.b_bar)
        lhs = J.T @ J + self.lam * np.eye(self.p)
        rhs = J.T @ (self.t_bar - c) + self.lam * self.s_bar
        x_star = np.linalg.solve(lhs, rhs)
        return QuadraticSolution(x_star, self.y_star_of(x_star), self.h(x_star))


def gen_quadratic_bilevel(p, d, m, n, kappa_target=10.0, seed=0, hetero=1.0, lam=1.0, interpolate=False):
    """Random instance with ``lambda_min(Abar) >= L / kappa_target``.

    Every per-example ``A_j`` is positive definite; ``hetero`` scales the
    spread of the per-example vectors (0 makes all examples identical).

    With ``interpolate`` the instance is built around a chosen solution
    ``(x*, y*, u*)``: the outer data are shared and the inner perturbations
    leave ``u*`` untouched, so every per-example update of the single-loop
    solver vanishes at the solution while the examples still disagree
    everywhere else. Returns ``(oracle, QuadraticSolution)``.
    """
    if min(p, d, m, n) < 1:
        raise ValueError("dimensions and dataset sizes must be >= 1")
    if kappa_target < 1:
        raise ValueError("kappa_target must be >= 1")
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must be a non-negative 64-bit integer")
    rng = np.random.default_rng(int(seed))

    top = max(1.0, kappa_target / 2)
    ev = np.sort(rng.uniform(1.0, top, size=d))
    ev[0], ev[-1] = 1.0, top
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    A_base = (Q * ev) @ Q.T

    # perturbations live in the complement of u_dir when interpolating
    u_dir = rng.standard_normal(d)
    u_dir /= np.linalg.norm(u_dir)
    proj = np.eye(d) - np.outer(u_dir, u_dir) if interpolate else np.eye(d)

    delta = min(0.25, (kappa_target - 1) / 8)
    E = rng.standard_normal((n, d, d))
    E = 0.5 * (E + np.swapaxes(E, 1, 2))
    E -= E.mean(axis=0)
    E = proj @ E @ proj
    spread = max(np.linalg.norm(Ej, 2) for Ej in E)
    A = A_base + (delta / spread * E if spread > 0 else np.zeros_like(E))
    A = 0.5 * (A + np.swapaxes(A, 1, 2))

    mu0 = min(np.linalg.eigvalsh(Aj)[0] for Aj in A)
    amax = max(np.linalg.eigvalsh(Aj)[-1] for Aj in A)
    budget = 0.9 * max(0.0, kappa_target * mu0 - amax)
    B = rng.standard_normal((d, p)) + proj @ (hetero * 0.5 * rng.standard_normal((n, d, p)))
    bmax = max(np.linalg.norm(Bj, 2) for Bj in B)
    B = B * (budget / bmax) if budget > 0 else np.zeros_like(B)

    if not interpolate:
        b = rng.standard_normal(d) + hetero * rng.standard_normal((n, d))
        t = rng.standard_normal(d) + hetero * rng.standard_normal((m, d))
        s = rng.standard_normal(p) + hetero * rng.standard_normal((m, p))
    else:
        x_star, y_star = rng.standard_normal(p), rng.standard_normal(d)
        u_star = rng.uniform(0.5, 1.5) * u_dir
        A_bar, B_bar = A.mean(axis=0), B.mean(axis=0)
        b = -(np.einsum("jde,e->jd", A, y_star) + np.einsum("jdp,p->jd", B, x_star))
        t = np.tile(y_star - A_bar @ u_star, (m, 1))
        s = np.tile(x_star - B_bar.T @ u_star / lam, (m, 1))
    oracle = QuadraticBilevel(A, B, b, t, s, lam=lam)
    return oracle, oracle.solution()
