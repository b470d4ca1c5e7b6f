#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the two hot scans (all-pairs column correlation and query-vs-
reference row correlation) on synthetic data at audit-realistic sizes.
JIT compilation happens during warmup, so reported times are steady-state.

    python benchmarks/bench_kernels.py [--quick]
"""

import argparse
import time

import numpy as np

from arrayaudit import _kernels


def best_of(fn, args, repeats=3):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def run(quick: bool) -> None:
    if not _kernels.HAS_NUMBA:
        print("numba is not importable; nothing to compare")
        return
    rng = np.random.default_rng(0)
    if quick:
        allpairs_shapes = [(500, 122)]
        cross_shapes = [(1000, 1000, 22)]
        nan_shapes = [(200, 80)]
    else:
        allpairs_shapes = [(500, 122), (2000, 300), (8958, 144)]
        cross_shapes = [(1000, 1000, 22), (4000, 4000, 22), (8958, 8958, 22)]
        nan_shapes = [(200, 80), (500, 150)]

    header = f"{'kernel':<32}{'shape':<22}{'numpy s':>10}{'numba s':>10}{'speedup':>9}"
    print(header)
    print("-" * len(header))

    for nfeat, ncol in allpairs_shapes:
        values = rng.standard_normal((nfeat, ncol))
        _kernels.column_correlations_numba(values[:10, :5])  # warm JIT
        t_np = best_of(_kernels.column_correlations_numpy, (values,))
        t_nb = best_of(_kernels.column_correlations_numba, (values,))
        a = _kernels.column_correlations_numpy(values)
        b = _kernels.column_correlations_numba(values)
        assert np.allclose(a, b, atol=1e-12, equal_nan=True)
        print(f"{'column_correlations':<32}{f'{nfeat}x{ncol}':<22}{t_np:>10.4f}{t_nb:>10.4f}{t_np / t_nb:>8.1f}x")

    for nq, nr, ncol in cross_shapes:
        q = rng.standard_normal((nq, ncol))
        r = rng.standard_normal((nr, ncol))
        _kernels.cross_row_correlations_numba(q[:10], r[:10])
        t_np = best_of(_kernels.cross_row_correlations_numpy, (q, r))
        t_nb = best_of(_kernels.cross_row_correlations_numba, (q, r))
        print(f"{'cross_row_correlations':<32}{f'{nq}x{nr}x{ncol}':<22}{t_np:>10.4f}{t_nb:>10.4f}{t_np / t_nb:>8.1f}x")

    for nfeat, ncol in nan_shapes:
        values = rng.standard_normal((nfeat, ncol))
        values[rng.random((nfeat, ncol)) < 0.1] = np.nan
        _kernels.pairwise_complete_column_correlations_numba(values[:10, :5])
        t_np = best_of(_kernels.pairwise_complete_column_correlations_numpy, (values,), repeats=1)
        t_nb = best_of(_kernels.pairwise_complete_column_correlations_numba, (values,))
        print(f"{'pairwise_complete (10% NaN)':<32}{f'{nfeat}x{ncol}':<22}{t_np:>10.4f}{t_nb:>10.4f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true", help="small shapes only")
    run(parser.parse_args().quick)
