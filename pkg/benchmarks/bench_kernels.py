#!/usr/bin/env python3
"""Head-to-head timing of the jitted kernels against the numpy fallback.

Run:  python3 benchmarks/bench_kernels.py [--repeats 20]

The same comparisons drive the CATRNET_DISABLE_NUMBA=1 escape hatch: if the
fallback is fast enough for your data sizes, numba is optional.
"""

import argparse
import time

import numpy as np

from catrnet import _kernels_nb, _kernels_np

RNG = np.random.default_rng(0)


def timeit(fn, args, repeats):
    fn(*args)  # warm-up (and jit compile)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench(repeats):
    n = 2000
    degree = 3
    knots = np.concatenate([np.zeros(4), [0.33, 0.66], np.ones(4)])
    x01 = RNG.uniform(0, 1, n)

    W = RNG.standard_normal((n, 2))
    T = RNG.standard_normal(n)
    gamma = RNG.standard_normal(2)
    b = np.sort(RNG.standard_normal(199))
    levels = np.arange(1, 200) / 200.0

    res = RNG.standard_normal(n)
    eta = np.sort(RNG.standard_normal(199))

    xmat = np.column_stack([np.ones(n), RNG.standard_normal(n)])
    t_obs = RNG.uniform(0, 2, n)
    s_obs = RNG.uniform(0, 2, n)
    y = RNG.standard_normal(n)

    cases = [
        ("bspline_basis (2000 pts)", "bspline_basis", (x01, knots, degree)),
        ("halton_points (10000)", "halton_points", (10_000, 1)),
        ("cqr_irls_pass (n=2000, L=199)", "cqr_irls_pass", (W, T, gamma, b, levels, 1e-4)),
        ("argmin_abs_grid (2000x199)", "argmin_abs_grid", (res, eta)),
        ("ll_gram (n=2000)", "ll_gram", (xmat, t_obs, s_obs, y, 1.0, 1.0, 0.4, 0.4)),
        ("ll_sandwich (n=2000)", "ll_sandwich", (xmat, t_obs, s_obs, y, 1.0, 1.0, 0.4, 0.4)),
    ]

    print(f"{'kernel':35s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for label, name, args in cases:
        t_np = timeit(getattr(_kernels_np, name), args, repeats)
        t_nb = timeit(getattr(_kernels_nb, name), args, repeats)
        print(f"{label:35s} {t_np * 1e3:9.3f}ms {t_nb * 1e3:9.3f}ms {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=20)
    bench(parser.parse_args().repeats)
