"""Time each hot kernel under the numba and numpy backends.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel with the best wall time of each backend and
their ratio.  The first numba call (compilation) is excluded.
"""

import argparse
import time

import numpy as np

from illume import kernels
from illume._accel import HAVE_NUMBA, use_backend


def cases(rng):
    n = 2000
    X = rng.normal(size=(n, 8))
    y = rng.integers(0, 2, size=n)
    D = np.abs(rng.normal(size=(n, n)))
    feature = np.array([0, 1, -1, -1, 2, -1, -1])
    threshold = np.array([0.0, 0.5, 0, 0, -0.5, 0, 0])
    left = np.array([1, 2, -1, -1, 5, -1, -1])
    right = np.array([4, 3, -1, -1, 6, -1, -1])
    W = rng.normal(size=(n, 16, 4))
    z = rng.normal(size=(n, 4))
    S = rng.normal(size=(n, 20))
    return {
        "best_split": (kernels.best_split, (X[:500], y[:500], 2, 1)),
        "tree_apply": (kernels.tree_apply, (X, feature, threshold, left, right)),
        "axis_offsets": (kernels.axis_offsets, (W, z, z - 1, z + 1)),
        "average_ranks": (kernels.average_ranks, (rng.integers(0, 100, size=200_000).astype(float),)),
        "knn_loo_predict": (kernels.knn_loo_predict, (D, y, 2, 5)),
        "running_min_mean": (kernels.running_min_mean, (S, np.full(n, 20))),
    }


def best_time(fn, args, repeat):
    fn(*args)  # warm-up, compiles under numba
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        print("numba not installed: only the numpy backend is available")
    print(f"{'kernel':<18} {'numpy [ms]':>11} {'numba [ms]':>11} {'speed-up':>9}")
    for name, (fn, fargs) in cases(np.random.default_rng(0)).items():
        with use_backend("numpy"):
            t_np = best_time(fn, fargs, args.repeat)
        if HAVE_NUMBA:
            with use_backend("numba"):
                t_nb = best_time(fn, fargs, args.repeat)
            print(f"{name:<18} {t_np * 1e3:11.3f} {t_nb * 1e3:11.3f} {t_np / t_nb:8.1f}x")
        else:
            print(f"{name:<18} {t_np * 1e3:11.3f} {'-':>11} {'-':>9}")


if __name__ == "__main__":
    main()
