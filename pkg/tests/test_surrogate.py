import itertools
import json

import numpy as np
import pytest

from illume import diffcore as dc
from illume import surrogate as su


# ------------------------------------------------------------- logistic
def test_logistic_separation_direction():
    z = np.array([[-3.0], [-2.0], [-1.0], [1.0], [2.0], [3.0]])
    y = np.array([0, 0, 0, 1, 1, 1])
    assert su.fit_logistic(z, y).coef[0, 0] > 0
    assert su.fit_logistic(-z, y).coef[0, 0] < 0


def test_logistic_symmetric_intercept(rng):
    a = rng.normal(size=(20, 2))
    Z = np.vstack([a + 1.0, -(a + 1.0)])
    y = np.r_[np.ones(20), np.zeros(20)].astype(int)
    assert abs(su.fit_logistic(Z, y).intercept[0]) < 1e-3


def test_logistic_beats_constant_predictor(rng):
    Z = rng.normal(size=(20, 2))
    y = (Z[:, 0] + 0.5 * rng.normal(size=20) > 0).astype(int)
    acc = np.mean(su.fit_logistic(Z, y).predict(Z) == y)
    assert acc >= max(np.mean(y), 1 - np.mean(y))


def test_logistic_single_class():
    with pytest.raises(dc.ContractError):
        su.fit_logistic(np.ones((3, 1)), [1, 1, 1])


def test_logistic_predict_formula(rng):
    m = su.LogisticSurrogate(np.array([0.0]), np.zeros((1, 3)), np.array([0, 1]))
    assert su.predict_logistic(m, np.ones(3))[1] == 0.5
    big = su.LogisticSurrogate(np.array([800.0]), np.zeros((1, 3)), np.array([0, 1]))
    assert su.predict_logistic(big, np.ones(3))[1] == pytest.approx(1.0)
    b0, b = rng.normal(), rng.normal(size=3)
    mod = su.LogisticSurrogate(np.array([b0]), b[None], np.array([0, 1]))
    z = rng.normal(size=3)
    assert abs(su.predict_logistic(mod, z)[1] - 1 / (1 + np.exp(-(b0 + b @ z)))) < 1e-12


def test_logistic_gradient_small_at_optimum(rng):
    Z = rng.normal(size=(60, 3))
    y = (Z @ [1.0, -2.0, 0.5] + rng.normal(size=60) > 0).astype(int)
    mod = su.fit_logistic(Z, y)
    assert mod.converged
    assert np.max(np.abs(su.logistic_gradient(mod, Z, y))) < 1e-5


def test_logistic_multiclass_one_vs_rest(rng):
    centers = np.array([[3, 0], [0, 3], [-3, -3]])
    y = np.repeat([0, 1, 2], 15)
    Z = centers[y] + rng.normal(size=(45, 2)) * 0.5
    mod = su.fit_logistic(Z, y)
    assert mod.coef.shape == (3, 2)
    P = mod.predict_proba(Z)
    np.testing.assert_allclose(P.sum(axis=1), 1.0)
    assert np.mean(mod.predict(Z) == y) > 0.95
    np.testing.assert_array_equal(mod.coefficients(2), mod.coef[2])


def test_logistic_binary_coefficients_sign():
    mod = su.LogisticSurrogate(np.array([0.1]), np.array([[1.0, -2.0]]), np.array([0, 1]))
    np.testing.assert_array_equal(mod.coefficients(1), [1.0, -2.0])
    np.testing.assert_array_equal(mod.coefficients(0), [-1.0, 2.0])


# ------------------------------------------------------------------ tree
def test_tree_pure_labels():
    t = su.fit_tree(np.arange(10.0)[:, None], np.full(10, 7))
    assert t.n_nodes == 1 and t.predict([[3.0]])[0] == 7


def test_tree_threshold_in_gap():
    z = np.r_[np.linspace(-2, -0.5, 10), np.linspace(0.5, 2, 10)][:, None]
    y = np.r_[np.zeros(10), np.ones(10)].astype(int)
    t = su.fit_tree(z, y, max_depth=3, min_leaf=1)
    assert t.feature[0] == 0 and -0.5 < t.threshold[0] < 0.5


def _brute_tree(Z, y, depth, min_leaf, classes):
    """Independent greedy CART: enumerate every (feature, midpoint) split."""
    def gini(lbl):
        if len(lbl) == 0:
            return 0.0
        p = np.array([np.mean(lbl == c) for c in classes])
        return len(lbl) * (1 - np.sum(p**2))

    def majority(lbl):
        counts = [np.sum(lbl == c) for c in classes]
        return classes[int(np.argmax(counts))]

    def build(idx, d):
        lbl = y[idx]
        if d == depth or len(set(lbl)) <= 1 or len(idx) < 2 * min_leaf:
            return ("leaf", majority(lbl))
        best = None
        for f in range(Z.shape[1]):
            vals = sorted(set(Z[idx, f]))
            for a, b in zip(vals, vals[1:]):
                thr = (a + b) / 2
                L, R = idx[Z[idx, f] <= thr], idx[Z[idx, f] > thr]
                if len(L) < min_leaf or len(R) < min_leaf:
                    continue
                imp = gini(y[L]) + gini(y[R])
                if best is None or imp < best[0] - 1e-12:
                    best = (imp, f, thr, L, R)
        if best is None or best[0] >= gini(lbl) - 1e-12:
            return ("leaf", majority(lbl))
        _, f, thr, L, R = best
        return ("split", f, thr, build(L, d + 1), build(R, d + 1))

    return build(np.arange(len(y)), 0)


def _brute_predict(node, z):
    while node[0] == "split":
        node = node[3] if z[node[1]] <= node[2] else node[4]
    return node[1]


def test_tree_brute_force_partition_oracle(rng):
    for _ in range(20):
        Z = np.round(rng.normal(size=(12, 2)), 2)
        y = rng.integers(0, 2, size=12)
        t = su.fit_tree(Z, y, max_depth=2, min_leaf=1)
        ref = _brute_tree(Z, y, 2, 1, np.unique(y))
        probe = np.round(rng.normal(size=(200, 2)) * 1.5, 3)
        for z in np.vstack([Z, probe]):
            assert t.predict(z[None])[0] == _brute_predict(ref, z)


def test_tree_leaf_majority_and_unique_leaf_match(rng):
    Z = rng.normal(size=(80, 3))
    y = (Z[:, 0] * Z[:, 1] > 0).astype(int)
    t = su.fit_tree(Z, y, max_depth=4, min_leaf=3)
    lo, hi = t.node_bounds()
    leaves = t.leaves()
    for z in rng.normal(size=(100, 3)):
        hits = [l for l in leaves if np.all((lo[l] < z) & (z <= hi[l]))]
        assert len(hits) == 1 and hits[0] == t.apply(z[None])[0]
    reach = t.apply(Z)
    for l in np.unique(reach):
        assert t.node_label[l] == np.bincount(y[reach == l], minlength=2).argmax()


def test_tree_preorder_numbering(rng):
    Z = rng.normal(size=(60, 2))
    y = (Z[:, 0] > Z[:, 1]).astype(int)
    t = su.fit_tree(Z, y, max_depth=3, min_leaf=2)
    for nd in range(t.n_nodes):
        if t.feature[nd] >= 0:
            assert t.left[nd] == nd + 1 and t.right[nd] > t.left[nd]


def test_tree_tuned_picks_depth(rng):
    Z = rng.normal(size=(200, 2))
    y = (Z[:, 0] > 0).astype(int)
    assert su.fit_tree_tuned(Z, y).max_depth == 3  # the simplest candidate already fits


def test_tree_determinism_and_round_trip(rng):
    Z = rng.normal(size=(50, 2))
    y = (Z.sum(axis=1) > 0).astype(int)
    a, b = su.fit_tree(Z, y), su.fit_tree(Z, y)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    back = su.surrogate_from_dict(json.loads(json.dumps(a.to_dict())))
    np.testing.assert_array_equal(back.predict(Z), a.predict(Z))
    lr = su.fit_logistic(Z, y)
    back_lr = su.surrogate_from_dict(json.loads(json.dumps(lr.to_dict())))
    np.testing.assert_array_equal(back_lr.predict_proba(Z), lr.predict_proba(Z))


# ------------------------------------------------------------ latent rules
def test_rule_single_leaf_unbounded():
    t = su.fit_tree(np.zeros((4, 2)), [1, 1, 1, 1])
    r = su.extract_latent_rule(t, np.zeros(2))
    assert np.all(np.isneginf(r.lower)) and np.all(np.isposinf(r.upper))


def test_rule_most_restrictive_bound():
    t = su.TreeSurrogate(
        feature=np.array([0, 0, -1, -1, -1]), threshold=np.array([2.0, 1.0, 0, 0, 0]),
        left=np.array([1, 2, -1, -1, -1]), right=np.array([4, 3, -1, -1, -1]),
        counts=np.ones((5, 2)), classes=np.array([0, 1]), n_features=1, max_depth=2, min_leaf=1)
    r = su.extract_latent_rule(t, np.array([0.5]))
    assert r.upper[0] == 1.0 and np.isneginf(r.lower[0])


def test_rule_membership_replay(rng):
    Z = rng.normal(size=(100, 3))
    y = (Z[:, 0] + Z[:, 2] > 0).astype(int)
    t = su.fit_tree(Z, y, max_depth=4, min_leaf=2)
    for z in rng.normal(size=(100, 3)):
        r = su.extract_latent_rule(t, z)
        assert r.contains(z) and np.all(r.lower <= r.upper)


def test_numba_and_numpy_trees_agree(rng):
    from illume._accel import HAVE_NUMBA, use_backend

    if not HAVE_NUMBA:
        pytest.skip("numba unavailable")
    Z = rng.normal(size=(150, 4))
    y = rng.integers(0, 3, size=150)
    with use_backend("numpy"):
        a = su.fit_tree(Z, y, 5, 3)
    with use_backend("numba"):
        b = su.fit_tree(Z, y, 5, 3)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
