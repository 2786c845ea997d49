"""Example orders (independent, shuffle-once, random-reshuffling) and the
averaged gradient-error analyzer."""

from __future__ import annotations

import enum
import math
import zlib
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import AlignmentError, InvalidDatasetError

ZERO_ERROR_FLOOR = 1e-24


class Strategy(str, enum.Enum):
    INDEPENDENT = "independent"
    SHUFFLE_ONCE = "shuffle_once"
    RANDOM_RESHUFFLE = "random_reshuffle"

    @classmethod
    def parse(cls, value: "str | Strategy") -> "Strategy":
        if isinstance(value, Strategy):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"iid": "independent", "wir": "independent", "so": "shuffle_once", "rr": "random_reshuffle"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown sampling strategy {value!r}") from None

    @property
    def is_permutation(self) -> bool:
        return self is not Strategy.INDEPENDENT


def derive_seed(seed: int, *tags: "int | str") -> int:
    """Deterministic 64-bit sub-seed for a (seed, tag, ...) path."""
    s = _kernels.mix64(int(seed) ^ 0x5851F42D4C957F2D)
    for tag in tags:
        t = zlib.crc32(tag.encode()) if isinstance(tag, str) else int(tag)
        s = _kernels.mix64(s ^ _kernels.mix64(t + _kernels.GOLDEN))
    return s


@dataclass(frozen=True)
class SampleOrder:
    indices: np.ndarray
    n_examples: int
    strategy: Strategy
    seed: int

    def __len__(self):
        return len(self.indices)

    def blocks(self) -> np.ndarray:
        """Aligned blocks of ``n_examples`` indices, one row per block."""
        if len(self) % self.n_examples:
            raise AlignmentError("order length is not a multiple of n_examples")
        return self.indices.reshape(-1, self.n_examples)


def make_order(strategy, n_examples: int, length: int, seed: int) -> SampleOrder:
    """Build a deterministic example order of the given length.

    Independent draws are i.i.d. uniform. Random reshuffling concatenates
    ``length / n_examples`` fresh permutations; shuffle-once repeats a
    single permutation.
    """
    strategy = Strategy.parse(strategy)
    if n_examples < 1:
        raise InvalidDatasetError("n_examples must be >= 1")
    if length < 0:
        raise ValueError("length must be >= 0")
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    seed = int(seed)
    if strategy is Strategy.INDEPENDENT:
        idx = _kernels.uniform_indices(seed, n_examples, length)
    else:
        if length % n_examples:
            raise AlignmentError(
                f"{strategy.value} order needs a length that is a multiple of {n_examples}, got {length}"
            )
        nblocks = length // n_examples
        if strategy is Strategy.RANDOM_RESHUFFLE:
            idx = _kernels.permutation_blocks(seed, n_examples, nblocks)
        else:
            idx = np.tile(_kernels.permutation_blocks(seed, n_examples, 1), nblocks)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    idx.setflags(write=False)
    return SampleOrder(idx, n_examples, strategy, seed)


@dataclass(frozen=True)
class GradientErrorFit:
    """Worst-case window errors and the fitted ``k**-alpha * C**2`` envelope."""

    k_values: np.ndarray
    sq_errors: np.ndarray
    alpha_hat: float
    C_hat: float
    A_hat: float

    def to_dict(self) -> dict:
        return {
            "k_values": [int(k) for k in self.k_values],
            "sq_errors": [float(e) for e in self.sq_errors],
            "alpha_hat": float(self.alpha_hat),
            "C_hat": float(self.C_hat),
            "A_hat": float(self.A_hat),
        }


def default_k_values(length: int) -> np.ndarray:
    ks = [1]
    while ks[-1] * 2 <= max(1, length // 2):
        ks.append(ks[-1] * 2)
    return np.array(ks, dtype=np.int64)


def _as_matrix(per_example_grads) -> np.ndarray:
    G = np.asarray(per_example_grads, dtype=np.float64)
    if G.ndim == 1:
        G = G[:, None]
    if G.ndim != 2 or G.shape[0] == 0:
        raise ValueError("per_example_grads must be a non-empty list of equal-length vectors")
    return G


def window_sq_errors(per_example_grads, order: SampleOrder, k: int) -> np.ndarray:
    """Squared window error for every start position ``t`` (direct summation)."""
    G = _as_matrix(per_example_grads)
    gbar = G.mean(axis=0)
    seq = G[order.indices]
    out = np.empty(len(order) - k + 1)
    for t in range(out.size):
        diff = seq[t : t + k].mean(axis=0) - gbar
        out[t] = diff @ diff
    return out


def measure_avg_gradient_error(per_example_grads, order: SampleOrder, k_values) -> GradientErrorFit:
    """Measure ``max_t ||mean(g[order[t:t+k]]) - mean(g)||^2`` for each window length ``k``
    and fit ``alpha``/``C`` by least squares in log-log space.

    Windows whose error is below ``1e-24`` are left out of the fit. When every
    window is exactly zero ``alpha_hat`` is ``inf`` and ``C_hat`` is 0; a
    single usable point gives ``alpha_hat = 0`` and ``C_hat = sqrt(error)``.
    """
    G = _as_matrix(per_example_grads)
    if G.shape[0] != order.n_examples:
        raise ValueError(f"{G.shape[0]} gradients for an order over {order.n_examples} examples")
    k = np.asarray(list(k_values), dtype=np.int64)
    if k.size == 0:
        raise ValueError("k_values must not be empty")
    if np.any(np.diff(k) <= 0) or k[0] < 1 or k[-1] > len(order):
        raise ValueError("k_values must be strictly increasing within [1, len(order)]")

    gbar = G.mean(axis=0)
    centered = np.ascontiguousarray((G - gbar)[order.indices])
    sq = np.asarray(_kernels.window_max_sq_errors(centered, k))
    dev = np.linalg.norm(G - gbar, axis=1)
    A_hat = float(dev.max())

    keep = sq > ZERO_ERROR_FLOOR
    if not keep.any():
        alpha, C = math.inf, 0.0
    elif keep.sum() == 1:
        alpha, C = 0.0, float(np.sqrt(sq[keep][0]))
    else:
        slope, intercept = np.polyfit(np.log(k[keep]), np.log(sq[keep]), 1)
        alpha, C = float(-slope), float(np.exp(intercept / 2))
    return GradientErrorFit(k, sq, alpha, C, A_hat)
