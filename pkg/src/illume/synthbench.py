"""Transparent synthetic classifiers with known explanations.

Two families act as black boxes: sparse linear logistic models and shallow
axis-parallel trees over the informative features.  Every classifier is a
pure function of ``(seed, family, index)`` so a small JSON manifest is enough
to regenerate it bit-identically.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .explain import AxisRule

STANDARD_WIDTHS = (4, 8, 16, 32, 64)
FAMILIES = ("linear", "rule")
_FAMILY_CODE = {"linear": 0, "rule": 1}


@dataclass(frozen=True)
class SyntheticConfig:
    t: int
    u: int = 0
    n_instances: int = 2048
    n_classifiers: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.t < 1 or self.u < 0:
            raise ValueError("need t >= 1 informative and u >= 0 uninformative features")
        if self.n_instances < 1 or self.n_classifiers < 1:
            raise ValueError("n_instances and n_classifiers must be positive")

    @property
    def m(self) -> int:
        return self.t + self.u

    @classmethod
    def standard(cls, m: int, **kw) -> "SyntheticConfig":
        """Grid entry of width m with t = min(16, m) informative features."""
        t = min(16, m)
        return cls(t=t, u=m - t, **kw)


def gen_dataset(config: SyntheticConfig, stream: int = 0, n: int | None = None) -> np.ndarray:
    """Standard-normal rows; ``stream`` separates e.g. training and explained sets."""
    rng = np.random.default_rng([config.seed, 2, stream])
    return rng.standard_normal((config.n_instances if n is None else n, config.m))


def _rng(config: SyntheticConfig, family: str, index: int) -> np.random.Generator:
    if not 0 <= index < config.n_classifiers:
        raise IndexError(f"classifier index {index} outside [0, {config.n_classifiers})")
    return np.random.default_rng([config.seed, _FAMILY_CODE[family], index])


# ----------------------------------------------------------------------
# linear family
# ----------------------------------------------------------------------
@dataclass
class TransparentLinear:
    weights: np.ndarray
    intercept: float

    classes = np.array([0, 1])

    def predict_proba(self, X) -> np.ndarray:
        s = self.intercept + np.atleast_2d(X) @ self.weights
        p = 0.5 * (1.0 + np.tanh(0.5 * s))  # overflow-free sigmoid
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] > 0.5).astype(np.int64)


def make_linear(config: SyntheticConfig, index: int) -> TransparentLinear:
    rng = _rng(config, "linear", index)
    w = np.zeros(config.m)
    w[: config.t] = rng.uniform(-1.0, 1.0, size=config.t)
    w0 = float(rng.uniform(-0.1, 0.1))
    return TransparentLinear(w, w0)


def gt_importance(clf: TransparentLinear, x=None) -> np.ndarray:
    """Reference importance of class 1: the coefficient vector."""
    return clf.weights.copy()


# ----------------------------------------------------------------------
# rule family
# ----------------------------------------------------------------------
@dataclass
class TransparentRuleBased:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    label: np.ndarray
    n_features: int

    classes = np.array([0, 1])

    def apply(self, X) -> np.ndarray:
        return kernels.tree_apply(X, self.feature, self.threshold, self.left, self.right)

    def predict(self, X) -> np.ndarray:
        return self.label[self.apply(X)]

    def predict_proba(self, X) -> np.ndarray:
        y = self.predict(X)
        out = np.zeros((len(y), 2))
        out[np.arange(len(y)), y] = 1.0
        return out


def rule_depth(t: int) -> int:
    return max(1, min(4, math.ceil(math.log2(t)))) if t > 1 else 1


def make_rulebased(config: SyntheticConfig, index: int, depth: int | None = None) -> TransparentRuleBased:
    """Complete tree of the given depth, nodes numbered in preorder.

    Internal nodes split a random informative feature at a uniform(-1, 1)
    threshold; leaves alternate 0, 1, 0, ... from left to right.
    """
    rng = _rng(config, "rule", index)
    d = rule_depth(config.t) if depth is None else int(depth)
    feature, threshold, left, right, label = [], [], [], [], []
    leaf_count = [0]

    def build(level: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        label.append(0)
        if level == d:
            label[node] = leaf_count[0] % 2
            leaf_count[0] += 1
            return node
        feature[node] = int(rng.integers(config.t))
        threshold[node] = float(rng.uniform(-1.0, 1.0))
        left[node] = build(level + 1)
        right[node] = build(level + 1)
        return node

    build(0)
    return TransparentRuleBased(
        np.array(feature, dtype=np.int64),
        np.array(threshold),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(label, dtype=np.int64),
        config.m,
    )


def gt_rule(clf: TransparentRuleBased, x) -> AxisRule:
    """Conjunction of the root-to-leaf conditions met by ``x``."""
    x = np.asarray(x, dtype=np.float64)
    lo = np.full(clf.n_features, -np.inf)
    hi = np.full(clf.n_features, np.inf)
    node = 0
    while clf.feature[node] >= 0:
        f, t = clf.feature[node], clf.threshold[node]
        if x[f] <= t:
            hi[f] = min(hi[f], t)
            node = clf.left[node]
        else:
            lo[f] = max(lo[f], t)
            node = clf.right[node]
    return AxisRule(lo, hi, int(clf.label[node]))


# ----------------------------------------------------------------------
# manifests
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Manifest:
    m: int
    t: int
    u: int
    family: str
    seed: int
    classifier_index: int
    n_classifiers: int = 5

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.m != self.t + self.u:
            raise ValueError("manifest needs m = t + u")

    def config(self, n_instances: int = 2048) -> SyntheticConfig:
        return SyntheticConfig(self.t, self.u, n_instances, self.n_classifiers, self.seed)

    def classifier(self):
        cfg = self.config()
        if self.family == "linear":
            return make_linear(cfg, self.classifier_index)
        return make_rulebased(cfg, self.classifier_index)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Manifest":
        d = dict(d)
        if "m" not in d:
            d["m"] = d["t"] + d.get("u", 0)
        d.setdefault("u", d["m"] - d["t"])
        d.setdefault("n_classifiers", max(5, d["classifier_index"] + 1))
        return cls(**d)
