"""The numba kernels and their numpy twins must agree on the same inputs."""

import os
import subprocess
import sys

import numpy as np
import pytest

from illume import kernels
from illume._accel import HAVE_NUMBA, backend, use_backend

pytestmark = pytest.mark.skipif(not HAVE_NUMBA, reason="numba unavailable")


def both(fn, *args):
    with use_backend("numpy"):
        a = fn(*args)
    with use_backend("numba"):
        b = fn(*args)
    return a, b


def test_best_split(rng):
    for _ in range(100):
        n, k = int(rng.integers(2, 40)), int(rng.integers(1, 5))
        X = rng.integers(0, 6, size=(n, k)).astype(float)
        y = rng.integers(0, 3, size=n)
        a, b = both(kernels.best_split, X, y, 3, int(rng.integers(1, 4)))
        assert a[0] == b[0] and a[1] == b[1]
        assert a[2] == pytest.approx(b[2], rel=1e-12) or (np.isinf(a[2]) and np.isinf(b[2]))


def test_tree_apply(rng):
    feature = np.array([1, 0, -1, -1, -1])
    threshold = np.array([0.0, -0.5, 0, 0, 0])
    left = np.array([1, 2, -1, -1, -1])
    right = np.array([4, 3, -1, -1, -1])
    X = rng.normal(size=(500, 2))
    X[:10, 1] = 0.0  # exactly on a threshold goes left
    a, b = both(kernels.tree_apply, X, feature, threshold, left, right)
    np.testing.assert_array_equal(a, b)
    assert np.all(a[:10] != 4)


def test_average_ranks(rng):
    for _ in range(100):
        v = rng.integers(0, 5, size=int(rng.integers(1, 30))).astype(float)
        a, b = both(kernels.average_ranks, v)
        np.testing.assert_array_equal(a, b)


def test_knn_loo(rng):
    for _ in range(50):
        n = int(rng.integers(3, 25))
        P = rng.integers(0, 3, size=(n, 2)).astype(float)
        D = np.sqrt(((P[:, None] - P[None]) ** 2).sum(-1))
        y = rng.integers(0, 3, size=n)
        a, b = both(kernels.knn_loo_predict, D, y, 3, int(rng.integers(1, n)))
        np.testing.assert_array_equal(a, b)


def test_running_min_mean(rng):
    S = rng.normal(size=(60, 20))
    lengths = rng.integers(0, 21, size=60)
    a, b = both(kernels.running_min_mean, S, lengths)
    np.testing.assert_allclose(a, b, rtol=1e-14, equal_nan=True)
    assert np.all(np.isnan(a[lengths == 0]))


def test_axis_offsets(rng):
    W = rng.normal(size=(40, 5, 3)) * (rng.random((40, 5, 3)) > 0.4)
    z = rng.normal(size=(40, 3))
    lo, hi = z - rng.random((40, 3)), z + rng.random((40, 3))
    hi[:, 1] = np.inf
    a, b = both(kernels.axis_offsets, W, z, lo, hi)
    for p, q in zip(a, b):
        np.testing.assert_allclose(p, q, rtol=1e-14)


def test_backend_switch():
    before = backend()
    with use_backend("numpy"):
        assert backend() == "numpy"
    assert backend() == before
    with pytest.raises(ValueError):
        with use_backend("cuda"):
            pass


def test_env_flag_selects_numpy():
    env = dict(os.environ, ILLUME_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", "from illume._accel import backend; print(backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
