"""Synthetic invariant risk minimisation, a conditional bilevel problem.

Outer example ``i`` is a logistic loss on the predicted logit ``y`` with an
L2 penalty on ``x``; its inner problem fits ``y`` to the noisy predictions
``<c_{j,i}, x>``:

    f(x, y; i)    = log(1 + exp(-b_i y)) + lam/2 ||x||^2
    g(x, y; i, j) = 1/2 (y - <c_{j,i}, x>)^2

The inner variable is the scalar logit (``d = 1``), so ``y_x^(i)`` is the
mean noisy prediction and the inner Hessian is exactly 1.
"""

from __future__ import annotations

import numpy as np

from ..core import ProblemMeta
from ..oracle import ConditionalOracle

# settings reported for the full-size experiment
PAPER_M = 1000
PAPER_N = 100
PAPER_SIGMA = 0.1
PAPER_LAMBDA = 0.1
PAPER_LR = 0.001


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _log1pexp(z):
    return np.logaddexp(0.0, z)


class SyntheticIRM(ConditionalOracle):
    kind = "irm"

    def __init__(self, x_true, c, labels, noisy, lam_out=PAPER_LAMBDA, sigma=PAPER_SIGMA):
        super().__init__()
        self.x_true = np.asarray(x_true, dtype=np.float64)
        self.c = np.asarray(c, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.float64)
        self.noisy = [np.asarray(ci, dtype=np.float64) for ci in noisy]
        self.lam_out = float(lam_out)
        self.sigma = float(sigma)
        self.m, self.p = self.c.shape
        self.d = 1
        self.c_mean = np.array([ci.mean(axis=0) for ci in self.noisy])
        cmax = max(float(np.max(np.sum(ci * ci, axis=1))) for ci in self.noisy)
        self.meta = ProblemMeta(mu=1.0, L=max(1.0 + cmax, self.lam_out), C_f=1.0)
        self.inner_lipschitz = 1.0

    def n_inner(self, i):
        return self.noisy[i].shape[0]

    def arrays(self) -> dict:
        out = {"x_true": self.x_true, "c": self.c, "labels": self.labels}
        out.update({f"noisy_{i}": ci for i, ci in enumerate(self.noisy)})
        return out

    def params(self) -> dict:
        return {"lam_out": self.lam_out, "sigma": self.sigma}

    def _grad_f_x(self, x, y, i):
        return self.lam_out * x

    def _grad_f_y(self, x, y, i):
        b = self.labels[i]
        return -b * _sigmoid(-b * y)

    def _grad_g_y(self, x, y, i, j):
        return y - self.noisy[i][j] @ x

    def _hvp_g_yy(self, x, y, i, j, v):
        return np.array(v, dtype=np.float64)

    def _jvp_g_xy(self, x, y, i, j, v):
        return -self.noisy[i][j] * v[0]

    def _value_f(self, x, y, i):
        return float(_log1pexp(-self.labels[i] * y[0]) + 0.5 * self.lam_out * x @ x)

    def _full_grad_g_y(self, x, y, i):
        return y - self.c_mean[i] @ x

    def _full_hvp_g_yy(self, x, y, i, v):
        return np.array(v, dtype=np.float64)

    def _full_jvp_g_xy(self, x, y, i, v):
        return -self.c_mean[i] * v[0]

    def inner_solution(self, x, i):
        return np.array([self.c_mean[i] @ x])

    def hypergradient(self, x):
        """Closed form: ``lam x - mean_i b_i sigmoid(-b_i y_i) cbar_i``."""
        y = self.c_mean @ x
        w = self.labels * _sigmoid(-self.labels * y)
        return self.lam_out * x - (w[:, None] * self.c_mean).mean(axis=0)

    def h(self, x):
        y = self.c_mean @ x
        return float(np.mean(_log1pexp(-self.labels * y)) + 0.5 * self.lam_out * x @ x)


def gen_irm(m=PAPER_M, n=PAPER_N, p=10, sigma=PAPER_SIGMA, lambda_out=PAPER_LAMBDA, seed=0):
    """Ground truth ``x*``, inputs ``c_i``, labels ``sign(<c_i, x*>)`` and ``n_i`` noisy copies of each input.

    ``n`` may be an int (all ``n_i`` equal) or a sequence of length ``m``.
    """
    if m < 1 or p < 1:
        raise ValueError("m and p must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    sizes = [int(n)] * m if np.isscalar(n) else [int(k) for k in n]
    if len(sizes) != m or min(sizes) < 1:
        raise ValueError("every n_i must be >= 1 and there must be m of them")
    rng = np.random.default_rng(int(seed))
    x_true = rng.standard_normal(p)
    c = rng.standard_normal((m, p))
    score = c @ x_true
    while np.any(np.abs(score) < 1e-12):
        bad = np.abs(score) < 1e-12
        c[bad] = rng.standard_normal((int(bad.sum()), p))
        score = c @ x_true
    labels = np.sign(score)
    noisy = [c[i] + sigma * rng.standard_normal((sizes[i], p)) for i in range(m)]
    return SyntheticIRM(x_true, c, labels, noisy, lam_out=lambda_out, sigma=sigma)
