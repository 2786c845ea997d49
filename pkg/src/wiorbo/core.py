"""Shared domain types, ball projection and epoch planning."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptStateError, EpochTooLongError, InvalidDatasetError

DEFAULT_EPOCH_CAP = 10**6


def check_finite(name: str, v: np.ndarray) -> None:
    if not np.all(np.isfinite(v)):
        raise CorruptStateError(f"{name} contains non-finite entries")


@dataclass
class IterateBO:
    """Solver state: outer variable ``x``, inner ``y`` and linear-system iterate ``u``."""

    x: np.ndarray
    y: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.x = np.array(self.x, dtype=np.float64).reshape(-1)
        self.y = np.array(self.y, dtype=np.float64).reshape(-1)
        self.u = np.array(self.u, dtype=np.float64).reshape(-1)
        if self.u.shape != self.y.shape:
            raise ValueError(f"u has length {self.u.size}, y has length {self.y.size}")

    @classmethod
    def zeros(cls, p: int, d: int) -> "IterateBO":
        return cls(np.zeros(p), np.zeros(d), np.zeros(d))

    @property
    def p(self) -> int:
        return self.x.size

    @property
    def d(self) -> int:
        return self.y.size

    def copy(self) -> "IterateBO":
        return IterateBO(self.x.copy(), self.y.copy(), self.u.copy())

    def check_finite(self) -> None:
        check_finite("x", self.x)
        check_finite("y", self.y)
        check_finite("u", self.u)


@dataclass(frozen=True)
class RateConfig:
    """Stepsizes for the outer (``eta``), inner (``gamma``) and ``u`` (``rho``) updates.

    ``decay`` turns on an epoch schedule ``rate / (1 + decay * r)`` for
    epoch index ``r`` (0-based); the default 0 keeps every rate constant.
    ``iota`` is the projection radius; ``None`` means "derive from the
    problem" (``C_f / mu``).
    """

    eta: float
    gamma: float
    rho: float
    iota: float | None = None
    decay: float = 0.0
    c1: float | None = None
    c2: float | None = None

    def __post_init__(self):
        for name in ("eta", "gamma", "rho", "decay"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if self.iota is not None and not (math.isfinite(self.iota) and self.iota > 0):
            raise ValueError(f"iota must be > 0, got {self.iota}")

    @classmethod
    def from_ratios(cls, eta: float, c1: float, c2: float, **kw) -> "RateConfig":
        """Ratio mode: ``gamma = c1 * eta`` and ``rho = c2 * eta``."""
        if c1 <= 0 or c2 <= 0:
            raise ValueError("c1 and c2 must be positive")
        return cls(eta=eta, gamma=c1 * eta, rho=c2 * eta, c1=c1, c2=c2, **kw)

    def at_epoch(self, r: int) -> tuple[float, float, float]:
        s = 1.0 / (1.0 + self.decay * r) if self.decay else 1.0
        return self.eta * s, self.gamma * s, self.rho * s

    def resolve_iota(self, meta: "ProblemMeta | None") -> float:
        if self.iota is not None:
            return self.iota
        if meta is None:
            raise ValueError("iota not given and the problem provides no ProblemMeta")
        return meta.C_f / meta.mu


@dataclass(frozen=True)
class EpochPlan:
    m: int
    n: int
    epoch_len: int
    outer_reps: int
    inner_reps: int


def plan_epoch(m: int, n: int, cap: int = DEFAULT_EPOCH_CAP) -> EpochPlan:
    """Epoch of length ``lcm(m, n)`` so both datasets are swept a whole number of times."""
    if m < 1 or n < 1:
        raise InvalidDatasetError(f"dataset sizes must be >= 1, got m={m}, n={n}")
    length = math.lcm(m, n)
    if length > cap:
        raise EpochTooLongError(
            f"lcm({m}, {n}) = {length} exceeds the epoch cap {cap}; choose dataset sizes deliberately"
        )
    return EpochPlan(m, n, length, length // m, length // n)


COUNTER_KINDS = ("gc_f", "gc_g", "jv_g", "hv_g")


@dataclass
class OracleCounters:
    """Tallies of oracle evaluations. Only ever incremented."""

    gc_f: int = 0
    gc_g: int = 0
    jv_g: int = 0
    hv_g: int = 0

    def add(self, kind: str, k: int = 1) -> None:
        if k < 0:
            raise ValueError("counters are monotone")
        setattr(self, kind, getattr(self, kind) + k)

    def snapshot(self) -> dict[str, int]:
        return {k: getattr(self, k) for k in COUNTER_KINDS}

    def merge(self, other: "OracleCounters") -> None:
        for k in COUNTER_KINDS:
            self.add(k, getattr(other, k))


@dataclass(frozen=True)
class ProblemMeta:
    """Strong convexity ``mu``, smoothness ``L`` and the bound ``C_f`` on ``||grad_y f||``."""

    mu: float
    L: float
    C_f: float
    kappa: float = field(init=False)

    def __post_init__(self):
        if not (self.mu > 0 and self.L > 0 and self.C_f > 0):
            raise ValueError("mu, L and C_f must be positive")
        if self.mu > self.L:
            raise ValueError(f"mu={self.mu} exceeds L={self.L}")
        object.__setattr__(self, "kappa", self.L / self.mu)


def project_ball(u: np.ndarray, iota: float) -> np.ndarray:
    """Euclidean projection onto the ball of radius ``iota``."""
    if not iota > 0:
        raise ValueError(f"iota must be positive, got {iota}")
    u = np.asarray(u, dtype=np.float64)
    check_finite("u", u)
    nrm = float(np.linalg.norm(u))
    if nrm <= iota:
        return u.copy()
    out = u / nrm * iota
    # rounding can leave the scaled norm one ulp above iota
    while np.linalg.norm(out) > iota:
        out = np.nextafter(out, 0.0)
    return out
