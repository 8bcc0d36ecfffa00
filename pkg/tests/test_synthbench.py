import json

import numpy as np
import pytest

from illume import synthbench as sb


def test_dataset_deterministic_and_standard():
    cfg = sb.SyntheticConfig(t=6, u=2, n_instances=5000, seed=3)
    A, B = sb.gen_dataset(cfg), sb.gen_dataset(cfg)
    np.testing.assert_array_equal(A, B)
    assert A.shape == (5000, 8)
    assert np.all(np.abs(A.mean(0)) < 0.1) and np.all(np.abs(A.std(0) - 1) < 0.1)
    assert not np.array_equal(A, sb.gen_dataset(cfg, stream=1))
    assert not np.array_equal(A, sb.gen_dataset(sb.SyntheticConfig(t=6, u=2, n_instances=5000, seed=4)))


def test_config_validation_and_standard_grid():
    with pytest.raises(ValueError):
        sb.SyntheticConfig(t=0)
    with pytest.raises(ValueError):
        sb.SyntheticConfig(t=2, u=-1)
    for m in sb.STANDARD_WIDTHS:
        c = sb.SyntheticConfig.standard(m)
        assert c.m == m and c.t == min(16, m)


def test_linear_classifier():
    cfg = sb.SyntheticConfig(t=3, u=4, seed=1)
    clf = sb.make_linear(cfg, 2)
    assert np.all(clf.weights[3:] == 0) and np.all(np.abs(clf.weights[:3]) <= 1)
    assert abs(clf.intercept) <= 0.1
    again = sb.make_linear(cfg, 2)
    np.testing.assert_array_equal(clf.weights, again.weights)
    assert not np.array_equal(clf.weights, sb.make_linear(cfg, 3).weights)
    X = sb.gen_dataset(cfg, n=200)
    p = clf.predict_proba(X)
    ref = [1 / (1 + np.exp(-(clf.intercept + sum(clf.weights[j] * x[j] for j in range(7))))) for x in X]
    np.testing.assert_allclose(p[:, 1], ref, atol=1e-12)
    np.testing.assert_allclose(p.sum(1), 1)
    np.testing.assert_array_equal(clf.predict(X), (np.array(ref) > 0.5).astype(int))
    np.testing.assert_array_equal(sb.gt_importance(clf), clf.weights)
    with pytest.raises(IndexError):
        sb.make_linear(cfg, 5)


def _replay(clf, x):
    node = 0
    path = []
    while clf.feature[node] >= 0:
        f, t = clf.feature[node], clf.threshold[node]
        path.append((f, t, x[f] <= t))
        node = clf.left[node] if x[f] <= t else clf.right[node]
    return node, path


@pytest.mark.parametrize("t", [1, 2, 5, 16, 40])
def test_rule_classifier_structure(t):
    cfg = sb.SyntheticConfig(t=t, u=3, seed=7)
    clf = sb.make_rulebased(cfg, 1)
    d = sb.rule_depth(t)
    assert d == max(1, min(4, int(np.ceil(np.log2(t))))) if t > 1 else d == 1
    internal = clf.feature >= 0
    assert internal.sum() == 2 ** d - 1 and (~internal).sum() == 2 ** d
    assert np.all(clf.feature[internal] < t)
    assert np.all(np.abs(clf.threshold[internal]) <= 1)
    assert list(clf.label[~internal]) == [i % 2 for i in range(2 ** d)]


def test_rule_prediction_and_gt_rule(rng):
    cfg = sb.SyntheticConfig(t=8, u=2, seed=2)
    clf = sb.make_rulebased(cfg, 0)
    X = sb.gen_dataset(cfg, n=300)
    for x in X:
        leaf, path = _replay(clf, x)
        assert clf.predict(x[None])[0] == clf.label[leaf]
        r = sb.gt_rule(clf, x)
        assert r.contains(x) and r.predicted_class == clf.label[leaf]
        for f, thr, went_left in path:
            assert (r.upper[f] <= thr) if went_left else (r.lower[f] >= thr)
    proba = clf.predict_proba(X)
    np.testing.assert_array_equal(proba.argmax(1), clf.predict(X))
    assert set(np.unique(proba)) <= {0.0, 1.0}


def test_gt_rule_region_is_pure(rng):
    cfg = sb.SyntheticConfig(t=5, u=1, seed=9)
    clf = sb.make_rulebased(cfg, 3)
    for x in sb.gen_dataset(cfg, n=20):
        r = sb.gt_rule(clf, x)
        lo = np.where(np.isfinite(r.lower), r.lower, -5.0)
        hi = np.where(np.isfinite(r.upper), r.upper, 5.0)
        P = lo + rng.random((1000, cfg.m)) * (hi - lo)
        assert np.all(clf.predict(P) == r.predicted_class)


def test_depth_one_and_single_leaf():
    cfg = sb.SyntheticConfig(t=1, seed=0)
    clf = sb.make_rulebased(cfg, 0)
    r = sb.gt_rule(clf, np.array([-5.0]))
    assert np.isneginf(r.lower[0]) and r.upper[0] == clf.threshold[0]
    leaf = sb.make_rulebased(cfg, 0, depth=0)
    r = sb.gt_rule(leaf, np.array([0.3]))
    assert np.all(np.isinf(r.lower)) and np.all(np.isinf(r.upper)) and r.predicted_class == 0


def test_manifest_round_trip():
    m = sb.Manifest(m=6, t=4, u=2, family="rule", seed=11, classifier_index=3)
    d = json.loads(json.dumps(m.to_dict()))
    back = sb.Manifest.from_dict(d)
    assert back == m
    a, b = m.classifier(), back.classifier()
    np.testing.assert_array_equal(a.threshold, b.threshold)
    assert sb.Manifest.from_dict({"t": 4, "u": 2, "family": "linear", "seed": 0, "classifier_index": 0}).m == 6
    with pytest.raises(ValueError):
        sb.Manifest(m=5, t=4, u=2, family="linear", seed=0, classifier_index=0)
    with pytest.raises(ValueError):
        sb.Manifest(m=6, t=4, u=2, family="forest", seed=0, classifier_index=0)
