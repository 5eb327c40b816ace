"""Benchmark the split-scan kernel: compiled extension vs numpy fallback.

Checks that both implementations agree bitwise on random inputs (including
tied feature values), then times them on single scans of growing length and
on an end-to-end boosted-tree fit.

Usage: python benchmarks/bench_splitscan.py [--sizes 100,1000,10000,100000]
"""

import argparse
import time

import numpy as np

import tabicl.prior_forge.trees as trees
from tabicl.prior_forge.splitscan_np import scan_splits as scan_np
from tabicl.prior_forge.trees import COMPILED_KERNEL, BoostedTreeRegressor

try:
    from tabicl.prior_forge._splitscan import scan_splits as scan_cy
except ImportError:
    scan_cy = None


def make_case(rng, k, dup_frac=0.3):
    xs = np.sort(rng.standard_normal(k))
    dup = rng.random(k) < dup_frac
    xs[dup] = np.round(xs[dup], 1)  # force tie blocks
    xs = np.sort(xs)
    ys = rng.standard_normal(k)
    return np.ascontiguousarray(xs), np.ascontiguousarray(ys)


def check_agreement(rng, cases=200):
    for _ in range(cases):
        k = int(rng.integers(2, 400))
        min_leaf = int(rng.integers(1, 4))
        xs, ys = make_case(rng, k)
        a = scan_np(xs, ys, min_leaf)
        b = scan_cy(xs, ys, min_leaf)
        if a != b:
            raise AssertionError(f"kernels disagree: {a} vs {b} (k={k})")
    print(f"agreement: {cases} random cases, identical (gain, threshold)")


def time_scan(fn, xs, ys, repeats):
    fn(xs, ys, 2)  # warm-up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(xs, ys, 2)
    return (time.perf_counter() - t0) / repeats


def time_fit(scan, rng, n=2000, m=5, repeats=3):
    X = rng.standard_normal((n, m))
    y = rng.standard_normal(n)
    trees.scan_splits = scan
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        BoostedTreeRegressor(n_estimators=10, max_depth=3).fit(X, y)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--sizes", default="100,1000,10000,100000")
    parser.add_argument("--repeats", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    print(f"compiled kernel available: {COMPILED_KERNEL}")
    rng = np.random.default_rng(args.seed)
    if scan_cy is None:
        print("extension not built; timing the numpy fallback only")
        for k in (int(s) for s in args.sizes.split(",")):
            xs, ys = make_case(rng, k)
            print(f"k={k:>7d}  numpy {time_scan(scan_np, xs, ys, args.repeats) * 1e6:9.1f} us")
        return

    check_agreement(rng)
    print(f"\n{'k':>8}  {'numpy (us)':>11}  {'cython (us)':>12}  speedup")
    for k in (int(s) for s in args.sizes.split(",")):
        xs, ys = make_case(rng, k)
        t_np = time_scan(scan_np, xs, ys, args.repeats)
        t_cy = time_scan(scan_cy, xs, ys, args.repeats)
        print(f"{k:>8d}  {t_np * 1e6:>11.1f}  {t_cy * 1e6:>12.1f}  {t_np / t_cy:6.1f}x")

    original = trees.scan_splits
    try:
        t_np = time_fit(scan_np, np.random.default_rng(args.seed))
        t_cy = time_fit(scan_cy, np.random.default_rng(args.seed))
    finally:
        trees.scan_splits = original
    print(f"\nboosted fit 2000x5, 10 stages: numpy {t_np:.3f}s  "
          f"cython {t_cy:.3f}s  speedup {t_np / t_cy:.1f}x")


if __name__ == "__main__":
    main()
