"""Compiled vs interpreted timings for the inner kernels.

Run: python3 benchmarks/bench_kernels.py --repeats 5
"""
import argparse
import time

import numpy as np

from mwclass import kernels
from mwclass._accel import USING_NUMBA, python_impl


def best_of(fn, args, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times) * 1000.0


def problems(n, d, seed):
    rng = np.random.default_rng(seed)
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    X = rng.normal(size=(n, d)) + 0.5 * y[:, None] / np.sqrt(d)
    pos, neg = np.ascontiguousarray(X[y > 0]), np.ascontiguousarray(X[y < 0])
    return {
        "cross_class_distances": (kernels.cross_class_distances, (pos, neg)),
        "dwd_barrier_newton": (kernels.dwd_barrier_newton, (X, y, 25.0, 1e-8, 200)),
        "svm_smo": (kernels.svm_smo, (X @ X.T, y, 1.0 / n, 1e-8, 100_000)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=40)
    ap.add_argument("--d", type=int, default=40)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if not USING_NUMBA:
        print("numba disabled (MWCLASS_DISABLE_NUMBA); both columns run the python body")
    print(f"n={args.n} d={args.d} best of {args.repeats}")
    print(f"{'kernel':<24}{'numba ms':>12}{'python ms':>12}{'speedup':>10}")
    for name, (fn, fargs) in problems(args.n, args.d, args.seed).items():
        fn(*fargs)  # compile
        t_nb = best_of(fn, fargs, args.repeats)
        t_py = best_of(python_impl(fn), fargs, args.repeats)
        print(f"{name:<24}{t_nb:>12.3f}{t_py:>12.3f}{t_py / max(t_nb, 1e-9):>9.1f}x")


if __name__ == "__main__":
    main()
