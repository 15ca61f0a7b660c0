"""Numba vs numpy timings for the enumeration kernels.

    python benchmarks/bench_kernels.py [--repeat N]

Both paths are called directly, so DQIC_NO_NUMBA does not matter here; the
first numba call is timed separately as compile (or cache load) time.
"""
import argparse
import math
import time

import numpy as np

from dqic import _accel
from dqic.model import BathSpec, build_kernel_table, build_time_grid, field_propagator


def best_of(fn, repeat):
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases():
    grid = build_time_grid(0.35, 0.05)  # M=7, 2^16 folded paths
    K = np.ascontiguousarray(build_kernel_table(grid, BathSpec(0.18)).matrix())
    props = np.array([field_propagator((1 - (p + 0.5) / grid.M), grid.dt) for p in range(grid.M)])
    init = np.full(2, 1 / math.sqrt(2), complex)
    spins = 1.0 - 2.0 * np.random.default_rng(0).integers(0, 2, size=(20000, K.shape[0]))
    yield "path_sum M=7", (grid.M, props, K, init), "path_sum"
    yield "quadratic_forms 20000x16", (spins, K), "quadratic_forms"
    yield "classical_weights n=18", (18, 1.0), "classical_weights"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if _accel.numba is None:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'kernel':28s} {'numpy':>10s} {'numba':>10s} {'first':>10s} {'speedup':>8s}")
    for name, a, fn in cases():
        f_np = getattr(_accel, fn + "_np")
        f_nb = getattr(_accel, fn + "_nb")
        t0 = time.perf_counter()
        r_nb = f_nb(*a)
        first = time.perf_counter() - t0
        r_np = f_np(*a)
        r_nb = r_nb[0] if isinstance(r_nb, tuple) else r_nb
        r_np = r_np[0] if isinstance(r_np, tuple) else r_np
        assert np.allclose(r_nb, r_np, rtol=1e-10, atol=1e-12), name
        t_np = best_of(lambda: f_np(*a), args.repeat)
        t_nb = best_of(lambda: f_nb(*a), args.repeat)
        print(f"{name:28s} {t_np:10.4f} {t_nb:10.4f} {first:10.4f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
