"""Compare the numba and numpy kernels used by the samplers.

    python3 benchmarks/bench_kernels.py [--n 64] [--epochs 256] [--repeats 5]

Prints the best-of-``repeats`` wall time per kernel and backend, the
speed-up, and whether the two backends agree.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from wiorbo import _kernels as K
from wiorbo.sampler import default_k_values


def best_time(fn, repeats):
    fn()  # warm-up (triggers jit compilation)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=64, help="examples per epoch")
    ap.add_argument("--epochs", type=int, default=256, help="order length in epochs")
    ap.add_argument("--dim", type=int, default=20, help="gradient dimension for the window scan")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=12345)
    args = ap.parse_args(argv)

    if not K.HAVE_NUMBA:
        print("numba is unavailable (or WIORBO_DISABLE_NUMBA is set); only the numpy path can run")
        return 1

    n, length = args.n, args.n * args.epochs
    rng = np.random.default_rng(args.seed)
    centered = rng.standard_normal((length, args.dim))
    centered -= centered.mean(axis=0)
    ks = default_k_values(length)

    cases = {
        "uniform_indices": (
            lambda: K.uniform_indices_np(args.seed, n, length),
            lambda: K.uniform_indices_nb(args.seed, n, length),
        ),
        "permutation_blocks": (
            lambda: K.permutation_blocks_np(args.seed, n, args.epochs),
            lambda: K.permutation_blocks_nb(args.seed, n, args.epochs),
        ),
        "window_max_sq_errors": (
            lambda: K.window_max_sq_errors_np(centered, ks),
            lambda: K.window_max_sq_errors_nb(centered, ks),
        ),
    }

    print(f"n={n} length={length} dim={args.dim} repeats={args.repeats}")
    print(f"{'kernel':22s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speed-up':>9s}  agree")
    for name, (f_np, f_nb) in cases.items():
        a, b = f_np(), f_nb()
        agree = np.array_equal(a, b) if a.dtype.kind == "i" else np.allclose(a, b, rtol=1e-10, atol=0)
        t_np, t_nb = best_time(f_np, args.repeats), best_time(f_nb, args.repeats)
        print(f"{name:22s} {1e3 * t_np:11.3f} {1e3 * t_nb:11.3f} {t_np / t_nb:8.1f}x  {agree}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
