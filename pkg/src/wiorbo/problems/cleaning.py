"""Small hyper-data-cleaning instance on two Gaussian blobs.

``x`` holds one logit weight per training example, ``y`` a linear
classifier (two features plus bias). Training example ``j`` enters the
inner loss with weight ``sigmoid(x_j)``:

    g(x, y; j) = sigmoid(x_j) * log(1 + exp(-l_j a_j'y)) + lam/2 ||y||^2
    f(x, y; i) = log(1 + exp(-l_i a_i'y))            (clean validation)

Weights are squashed so the inner problem stays ``lam``-strongly convex.
"""

from __future__ import annotations

import numpy as np

from ..core import ProblemMeta
from ..oracle import BilevelOracle
from ..sampler import derive_seed

L2_STRENGTH = 1e-3
NOISY_FRACTION = 0.6
INNER_LR = 0.1


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class DataCleaningSmall(BilevelOracle):
    kind = "data_cleaning"

    def __init__(self, a_tr, l_tr, a_val, l_val, corrupted, lam=L2_STRENGTH):
        super().__init__()
        self.a_tr = np.asarray(a_tr, dtype=np.float64)
        self.l_tr = np.asarray(l_tr, dtype=np.float64)
        self.a_val = np.asarray(a_val, dtype=np.float64)
        self.l_val = np.asarray(l_val, dtype=np.float64)
        self.corrupted = np.asarray(corrupted, dtype=bool)
        self.lam = float(lam)
        self.n, self.d = self.a_tr.shape
        self.m = self.a_val.shape[0]
        self.p = self.n
        amax = float(np.max(np.sum(self.a_tr**2, axis=1)))
        self.inner_lipschitz = 0.25 * amax + self.lam
        C_f = float(np.max(np.linalg.norm(self.a_val, axis=1)))
        self.meta = ProblemMeta(mu=self.lam, L=self.inner_lipschitz + 0.25 * np.sqrt(amax) + 0.1, C_f=C_f)

    def arrays(self) -> dict:
        return {
            "a_tr": self.a_tr,
            "l_tr": self.l_tr,
            "a_val": self.a_val,
            "l_val": self.l_val,
            "corrupted": self.corrupted.astype(np.float64),
        }

    def params(self) -> dict:
        return {"lam": self.lam}

    # helpers on the logistic margin z = l a'y
    def _tr_margin(self, y, j=None):
        if j is None:
            return self.l_tr * (self.a_tr @ y)
        return self.l_tr[j] * (self.a_tr[j] @ y)

    def _grad_f_x(self, x, y, i):
        return np.zeros(self.p)

    def _grad_f_y(self, x, y, i):
        z = self.l_val[i] * (self.a_val[i] @ y)
        return -self.l_val[i] * _sigmoid(-z) * self.a_val[i]

    def _grad_g_y(self, x, y, j):
        z = self._tr_margin(y, j)
        return -_sigmoid(x[j]) * self.l_tr[j] * _sigmoid(-z) * self.a_tr[j] + self.lam * y

    def _hvp_g_yy(self, x, y, j, v):
        z = self._tr_margin(y, j)
        curv = _sigmoid(x[j]) * _sigmoid(z) * _sigmoid(-z)
        return curv * (self.a_tr[j] @ v) * self.a_tr[j] + self.lam * v

    def _jvp_g_xy(self, x, y, j, v):
        z = self._tr_margin(y, j)
        sx = _sigmoid(x[j])
        out = np.zeros(self.p)
        out[j] = -sx * (1 - sx) * self.l_tr[j] * _sigmoid(-z) * (self.a_tr[j] @ v)
        return out

    def _value_f(self, x, y, i):
        return float(np.logaddexp(0.0, -self.l_val[i] * (self.a_val[i] @ y)))

    def _value_g(self, x, y, j):
        return float(_sigmoid(x[j]) * np.logaddexp(0.0, -self._tr_margin(y, j)) + 0.5 * self.lam * y @ y)

    def _full_grad_f_x(self, x, y):
        return np.zeros(self.p)

    def _full_grad_f_y(self, x, y):
        z = self.l_val * (self.a_val @ y)
        return -(self.l_val * _sigmoid(-z)) @ self.a_val / self.m

    def _full_grad_g_y(self, x, y):
        z = self._tr_margin(y)
        w = _sigmoid(x) * self.l_tr * _sigmoid(-z)
        return -(w @ self.a_tr) / self.n + self.lam * y

    def _full_hvp_g_yy(self, x, y, v):
        z = self._tr_margin(y)
        curv = _sigmoid(x) * _sigmoid(z) * _sigmoid(-z)
        return ((curv * (self.a_tr @ v)) @ self.a_tr) / self.n + self.lam * v

    def _full_jvp_g_xy(self, x, y, v):
        z = self._tr_margin(y)
        sx = _sigmoid(x)
        return -sx * (1 - sx) * self.l_tr * _sigmoid(-z) * (self.a_tr @ v) / self.n

    def _full_value_f(self, x, y):
        return float(np.mean(np.logaddexp(0.0, -self.l_val * (self.a_val @ y))))

    def f1_score(self, x) -> float:
        """F1 of flagging examples whose centred weight logit is negative as corrupted."""
        x = np.asarray(x, dtype=np.float64)
        flagged = (x - x.mean()) < 0
        tp = int(np.sum(flagged & self.corrupted))
        fp = int(np.sum(flagged & ~self.corrupted))
        fn = int(np.sum(~flagged & self.corrupted))
        if tp == 0:
            return 0.0
        return 2 * tp / (2 * tp + fp + fn)


def _blobs(rng, count, sep):
    labels = np.where(rng.random(count) < 0.5, -1.0, 1.0)
    pts = rng.standard_normal((count, 2)) + sep * labels[:, None] * np.array([1.0, 0.5])
    feats = np.hstack([pts, np.ones((count, 1))])
    return feats, labels


def gen_data_cleaning_small(n_train=200, n_val=50, corrupt_frac=NOISY_FRACTION, seed=0, sep=1.5):
    """Gaussian-blob train/validation split with a fraction of flipped training labels."""
    if not 0.0 <= corrupt_frac <= 1.0:
        raise ValueError("corrupt_frac must lie in [0, 1]")
    if n_train < 2 or n_val < 2:
        raise ValueError("need at least two training and two validation examples")
    attempt = 0
    while True:
        rng = np.random.default_rng(derive_seed(seed, "cleaning", attempt))
        a_tr, clean = _blobs(rng, n_train, sep)
        a_val, l_val = _blobs(rng, n_val, sep)
        corrupted = np.zeros(n_train, dtype=bool)
        corrupted[rng.permutation(n_train)[: int(round(corrupt_frac * n_train))]] = True
        l_tr = np.where(corrupted, -clean, clean)
        if len(np.unique(l_tr)) == 2 and len(np.unique(l_val)) == 2:
            return DataCleaningSmall(a_tr, l_tr, a_val, l_val, corrupted)
        attempt += 1
