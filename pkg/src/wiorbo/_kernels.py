"""Hot loops for order generation and window-error scans.

Each kernel has a pure-numpy implementation (``*_np``) and, when numba is
importable, a jitted twin (``*_nb``). The public names bind to the jitted
variant unless ``WIORBO_DISABLE_NUMBA`` is set to a non-empty value other
than ``0``. Both paths produce bit-identical integer output; the window
scans agree to floating-point summation order.

Random numbers come from a counter-based SplitMix64 stream: output ``k`` of
the stream seeded with ``s`` is ``mix(s + (k + 1) * GOLDEN)``. Bounded
integers use the multiply-shift map ``((v >> 32) * n) >> 32``, which is
exact in 64-bit arithmetic for ``n < 2**32``.
"""

from __future__ import annotations

import os

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
MASK64 = (1 << 64) - 1

_U_GOLDEN = np.uint64(GOLDEN)
_U_MIX1 = np.uint64(MIX1)
_U_MIX2 = np.uint64(MIX2)
_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)
_U32 = np.uint64(32)
_U1 = np.uint64(1)


def numba_disabled() -> bool:
    return os.environ.get("WIORBO_DISABLE_NUMBA", "") not in ("", "0")


def mix64(z: int) -> int:
    """SplitMix64 finalizer on Python ints (used for seed derivation)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


# -- numpy path ---------------------------------------------------------------


def stream_np(seed: int, start: int, count: int) -> np.ndarray:
    k = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed) + k * _U_GOLDEN
        z = (z ^ (z >> _U30)) * _U_MIX1
        z = (z ^ (z >> _U27)) * _U_MIX2
    return z ^ (z >> _U31)


def _bounded_np(v: np.ndarray, n) -> np.ndarray:
    with np.errstate(over="ignore"):
        return ((v >> _U32) * np.asarray(n, dtype=np.uint64)) >> _U32


def uniform_indices_np(seed: int, n: int, length: int) -> np.ndarray:
    return _bounded_np(stream_np(seed, 0, length), n).astype(np.int64)


def permutation_blocks_np(seed: int, n: int, nblocks: int) -> np.ndarray:
    """``nblocks`` Fisher-Yates permutations of ``range(n)``; block ``b`` reads counters ``b*n ...``."""
    out = np.empty(n * nblocks, dtype=np.int64)
    bounds = np.arange(n, 1, -1, dtype=np.uint64)  # i + 1 for i = n-1 .. 1
    for b in range(nblocks):
        draws = _bounded_np(stream_np(seed, b * n, n - 1), bounds).astype(np.int64)
        perm = np.arange(n, dtype=np.int64)
        for step, i in enumerate(range(n - 1, 0, -1)):
            j = draws[step]
            perm[i], perm[j] = perm[j], perm[i]
        out[b * n : (b + 1) * n] = perm
    return out


def window_max_sq_errors_np(centered: np.ndarray, k_values: np.ndarray) -> np.ndarray:
    """Max over start ``t`` of ``||mean(centered[t:t+k])||^2`` for each ``k``."""
    L, D = centered.shape
    prefix = np.zeros((L + 1, D))
    np.cumsum(centered, axis=0, out=prefix[1:])
    out = np.empty(len(k_values))
    for idx, k in enumerate(k_values):
        diff = prefix[k:] - prefix[: L + 1 - k]
        out[idx] = np.max(np.einsum("ij,ij->i", diff, diff)) / (k * k)
    return out


# -- numba path ---------------------------------------------------------------

HAVE_NUMBA = False
if not numba_disabled():
    try:
        from numba import njit

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - exercised only without numba
        HAVE_NUMBA = False

if HAVE_NUMBA:

    @njit(cache=True)
    def _mix_nb(z):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
        return z ^ (z >> np.uint64(31))

    @njit(cache=True)
    def _draw_nb(seed, k):
        return _mix_nb(seed + (k + np.uint64(1)) * np.uint64(GOLDEN))

    @njit(cache=True)
    def _uniform_nb(seed, n, length):
        out = np.empty(length, dtype=np.int64)
        un = np.uint64(n)
        for t in range(length):
            v = _draw_nb(seed, np.uint64(t))
            out[t] = np.int64(((v >> np.uint64(32)) * un) >> np.uint64(32))
        return out

    @njit(cache=True)
    def _perm_blocks_nb(seed, n, nblocks):
        out = np.empty(n * nblocks, dtype=np.int64)
        for b in range(nblocks):
            base = b * n
            for i in range(n):
                out[base + i] = i
            step = 0
            for i in range(n - 1, 0, -1):
                v = _draw_nb(seed, np.uint64(base + step))
                j = np.int64(((v >> np.uint64(32)) * np.uint64(i + 1)) >> np.uint64(32))
                tmp = out[base + i]
                out[base + i] = out[base + j]
                out[base + j] = tmp
                step += 1
        return out

    @njit(cache=True)
    def window_max_sq_errors_nb(centered, k_values):
        L, D = centered.shape
        prefix = np.zeros((L + 1, D))
        for t in range(L):
            for c in range(D):
                prefix[t + 1, c] = prefix[t, c] + centered[t, c]
        out = np.empty(k_values.shape[0])
        for idx in range(k_values.shape[0]):
            k = k_values[idx]
            best = 0.0
            for t in range(L - k + 1):
                s = 0.0
                for c in range(D):
                    diff = prefix[t + k, c] - prefix[t, c]
                    s += diff * diff
                if s > best:
                    best = s
            out[idx] = best / (k * k)
        return out

    def uniform_indices_nb(seed: int, n: int, length: int) -> np.ndarray:
        return _uniform_nb(np.uint64(seed), n, length)

    def permutation_blocks_nb(seed: int, n: int, nblocks: int) -> np.ndarray:
        return _perm_blocks_nb(np.uint64(seed), n, nblocks)

    uniform_indices = uniform_indices_nb
    permutation_blocks = permutation_blocks_nb
    window_max_sq_errors = window_max_sq_errors_nb
else:
    uniform_indices = uniform_indices_np
    permutation_blocks = permutation_blocks_np
    window_max_sq_errors = window_max_sq_errors_np

BACKEND = "numba" if HAVE_NUMBA else "numpy"
