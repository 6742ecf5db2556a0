#!/usr/bin/env python
"""Timing of the shifted tridiagonal solves, numba against the numpy fallback.

The workload is the one behind every radial seminorm and Pohozaev check: one
solve per quadrature node of the resolvent integral, on an algebraic radial
grid.

    python benchmarks/bench_kernels.py [--M 1024 2048] [--repeat 5]
"""
import argparse
import time

import numpy as np

from fkirchhoff import _accel
from fkirchhoff.grids import make_radial_grid
from fkirchhoff.spectral import sector_stiffness


def workload(M, N=2, s=0.75, n_shifts=None):
    g = make_radial_grid(N, M, 1e8)
    kap, k0, ex = sector_stiffness(g, 0)
    w = g.weights
    n = n_shifts or int((np.log(1e8**2) + 36 / s + 36 / (1 - s) + 30) / 0.25)
    shifts = np.geomspace(1e-20, 1e6, n)
    rhs = np.random.default_rng(0).standard_normal((M, n))
    return kap, k0, ex, w, shifts, rhs


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--M", type=int, nargs="+", default=[512, 1024, 2048])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    if not _accel.HAVE_NUMBA:
        print("numba unavailable (or FKIRCHHOFF_NO_NUMBA set); timing numpy only")
    print(f"{'M':>6} {'shifts':>7} {'numpy [s]':>10} {'numba [s]':>10} {'speedup':>8} {'max rel diff':>13}")
    for M in args.M:
        data = workload(M)
        t_np, x_np = best_of(lambda: _accel.shifted_solve(*data, backend="numpy"), args.repeat)
        if _accel.HAVE_NUMBA:
            _accel.shifted_solve(*data, backend="numba")  # compile outside the timing
            t_nb, x_nb = best_of(lambda: _accel.shifted_solve(*data, backend="numba"), args.repeat)
            diff = np.max(np.abs(x_nb - x_np) / np.maximum(np.abs(x_np), 1e-300))
            print(f"{M:>6} {data[4].size:>7} {t_np:>10.4f} {t_nb:>10.4f} {t_np / t_nb:>8.1f} {diff:>13.2e}")
        else:
            print(f"{M:>6} {data[4].size:>7} {t_np:>10.4f} {'-':>10} {'-':>8} {'-':>13}")


if __name__ == "__main__":
    main()
