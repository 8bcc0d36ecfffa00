"""Global surrogates fit on latent codes: logistic regression and CART."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .config import TOL
from .diffcore import ContractError, DimensionError


def _sigmoid(s):
    return 0.5 * (1.0 + np.tanh(0.5 * s))


# ----------------------------------------------------------------------
# logistic
# ----------------------------------------------------------------------
@dataclass
class LogisticSurrogate:
    """One logistic model per class column of ``coef`` (one-vs-rest).

    In the binary case a single model scores ``classes[1]``.
    """

    intercept: np.ndarray  # (n_models,)
    coef: np.ndarray  # (n_models, k)
    classes: np.ndarray
    converged: bool = True

    kind = "lr"

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def decision(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        if Z.shape[1] != self.coef.shape[1]:
            raise DimensionError(f"expected {self.coef.shape[1]} latent features")
        return Z @ self.coef.T + self.intercept

    def predict_proba(self, Z) -> np.ndarray:
        s = self.decision(Z)
        if self.n_classes == 2:
            p = _sigmoid(s[:, 0])
            return np.column_stack([1.0 - p, p])
        s = s - s.max(axis=1, keepdims=True)
        e = np.exp(s)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, Z) -> np.ndarray:
        return self.classes[np.argmax(self.predict_proba(Z), axis=1)]

    def coefficients(self, target_class) -> np.ndarray:
        """Latent coefficients whose pullback explains ``target_class``."""
        pos = int(np.nonzero(self.classes == target_class)[0][0])
        if self.n_classes == 2:
            return self.coef[0] if pos == 1 else -self.coef[0]
        return self.coef[pos]

    def to_dict(self) -> dict:
        return {
            "kind": "lr",
            "intercept": self.intercept.tolist(),
            "coef": self.coef.tolist(),
            "classes": self.classes.tolist(),
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d) -> "LogisticSurrogate":
        return cls(
            np.array(d["intercept"], dtype=np.float64),
            np.array(d["coef"], dtype=np.float64).reshape(len(d["intercept"]), -1),
            np.array(d["classes"]),
            bool(d.get("converged", True)),
        )


def _logistic_obj(theta, Z1, y, l2):
    s = Z1 @ theta
    # log(1 + e^s) - y s, stable for both signs
    loss = np.mean(np.logaddexp(0.0, s) - y * s) + 0.5 * l2 * np.dot(theta[1:], theta[1:])
    g = Z1.T @ (_sigmoid(s) - y) / len(y)
    g[1:] += l2 * theta[1:]
    return loss, g


def _fit_binary(Z, y, l2, max_iter, gtol):
    Z1 = np.column_stack([np.ones(len(Z)), Z])
    theta = np.zeros(Z1.shape[1])
    f, g = _logistic_obj(theta, Z1, y, l2)
    step = 1.0
    prev_theta = prev_g = None
    for _ in range(max_iter):
        if np.max(np.abs(g)) < gtol:
            return theta, True
        if prev_g is not None:
            # Barzilai-Borwein initial step, then Armijo backtracking
            s_, y_ = theta - prev_theta, g - prev_g
            sy = float(np.dot(s_, y_))
            step = float(np.dot(s_, s_)) / sy if sy > 0 else 1.0
        gg = float(np.dot(g, g))
        while True:
            cand = theta - step * g
            fc, gc = _logistic_obj(cand, Z1, y, l2)
            if fc <= f - 1e-4 * step * gg or step < 1e-14:
                break
            step *= 0.5
        prev_theta, prev_g = theta, g
        theta, f, g = cand, fc, gc
    return theta, bool(np.max(np.abs(g)) < gtol)


def fit_logistic(Z, labels, l2: float = 1e-3, max_iter: int = 5000) -> LogisticSurrogate:
    """L2-penalized logistic regression (one-vs-rest beyond two classes).

    Minimizes mean log-loss + l2/2 * ||beta||^2; the intercept is not penalized.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    labels = np.asarray(labels)
    if len(Z) < 2 or len(labels) != len(Z):
        raise ContractError("need at least two aligned rows")
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ContractError("labels contain a single class")
    targets = [classes[1]] if len(classes) == 2 else list(classes)
    b0, B, ok = [], [], True
    for c in targets:
        theta, conv = _fit_binary(Z, (labels == c).astype(np.float64), l2, max_iter, TOL.logistic_gtol)
        b0.append(theta[0])
        B.append(theta[1:])
        ok &= conv
    return LogisticSurrogate(np.array(b0), np.array(B), classes, ok)


def predict_logistic(model: LogisticSurrogate, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return model.predict_proba(z[None, :] if z.ndim == 1 else z)[0 if z.ndim == 1 else slice(None)]


def logistic_gradient(model: LogisticSurrogate, Z, labels, l2: float = 1e-3) -> np.ndarray:
    """Gradient of the penalized objective at the fitted parameters (all models stacked)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    Z1 = np.column_stack([np.ones(len(Z)), Z])
    targets = [model.classes[1]] if model.n_classes == 2 else list(model.classes)
    gs = []
    for i, c in enumerate(targets):
        theta = np.concatenate([[model.intercept[i]], model.coef[i]])
        gs.append(_logistic_obj(theta, Z1, (np.asarray(labels) == c).astype(np.float64), l2)[1])
    return np.concatenate(gs)


# ----------------------------------------------------------------------
# decision tree
# ----------------------------------------------------------------------
@dataclass
class LatentRule:
    """Per-dimension interval (lower, upper]; infinite bounds are allowed."""

    lower: np.ndarray
    upper: np.ndarray

    def contains(self, z) -> bool:
        z = np.asarray(z, dtype=np.float64)
        return bool(np.all((self.lower < z) & (z <= self.upper)))


@dataclass
class TreeSurrogate:
    feature: np.ndarray  # -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, n_classes) training histogram
    classes: np.ndarray
    n_features: int
    max_depth: int
    min_leaf: int

    kind = "dt"

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def node_label(self) -> np.ndarray:
        return self.classes[np.argmax(self.counts, axis=1)]

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def apply(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        if Z.shape[1] != self.n_features:
            raise DimensionError(f"expected {self.n_features} latent features")
        return kernels.tree_apply(Z, self.feature, self.threshold, self.left, self.right)

    def predict(self, Z) -> np.ndarray:
        return self.node_label[self.apply(Z)]

    def predict_proba(self, Z) -> np.ndarray:
        c = self.counts[self.apply(Z)]
        return c / c.sum(axis=1, keepdims=True)

    def node_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Interval bounds of every node's region, each (n_nodes, k)."""
        lo = np.full((self.n_nodes, self.n_features), -np.inf)
        hi = np.full((self.n_nodes, self.n_features), np.inf)
        for node in range(self.n_nodes):
            f = self.feature[node]
            if f < 0:
                continue
            t = self.threshold[node]
            L, R = self.left[node], self.right[node]
            lo[L], hi[L] = lo[node], hi[node]
            lo[R], hi[R] = lo[node], hi[node]
            hi[L, f] = min(hi[L, f], t)
            lo[R, f] = max(lo[R, f], t)
        return lo, hi

    def leaves(self) -> np.ndarray:
        return np.nonzero(self.feature < 0)[0]

    def to_dict(self) -> dict:
        return {
            "kind": "dt",
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "counts": self.counts.tolist(),
            "classes": self.classes.tolist(),
            "n_features": self.n_features,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
        }

    @classmethod
    def from_dict(cls, d) -> "TreeSurrogate":
        return cls(
            np.array(d["feature"], dtype=np.int64),
            np.array(d["threshold"], dtype=np.float64),
            np.array(d["left"], dtype=np.int64),
            np.array(d["right"], dtype=np.int64),
            np.array(d["counts"], dtype=np.float64),
            np.array(d["classes"]),
            int(d["n_features"]),
            int(d["max_depth"]),
            int(d["min_leaf"]),
        )


def _gini_sum(counts: np.ndarray) -> float:
    n = counts.sum()
    return float(n - np.dot(counts, counts) / n) if n > 0 else 0.0


def fit_tree(Z, labels, max_depth: int = 4, min_leaf: int = 5) -> TreeSurrogate:
    """Greedy CART with Gini impurity.

    A node is split only when the best admissible split strictly lowers the
    weighted impurity; children must each hold at least ``min_leaf`` rows.
    Nodes are numbered in depth-first preorder.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    labels = np.asarray(labels)
    if len(Z) < 1:
        raise ContractError("need at least one row")
    classes, y = np.unique(labels, return_inverse=True)
    y = y.ravel().astype(np.int64)
    C = len(classes)
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(rows):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(np.bincount(y[rows], minlength=C).astype(np.float64))
        return len(feature) - 1

    root = new_node(np.arange(len(Z)))
    stack = [(root, np.arange(len(Z)), 0)]
    while stack:
        node, rows, depth = stack.pop()
        cnt = counts[node]
        if depth >= max_depth or np.count_nonzero(cnt) <= 1 or len(rows) < 2 * min_leaf:
            continue
        f, t, imp = kernels.best_split(Z[rows], y[rows], C, min_leaf)
        if f < 0 or imp * len(rows) >= _gini_sum(cnt) - 1e-12:
            continue
        go_left = Z[rows, f] <= t
        feature[node], threshold[node] = f, t
        L = new_node(rows[go_left])
        R = new_node(rows[~go_left])
        left[node], right[node] = L, R
        # push right first so the left subtree is numbered first
        stack.append((R, rows[~go_left], depth + 1))
        stack.append((L, rows[go_left], depth + 1))
    # children are allocated in pairs; renumber to depth-first preorder
    return _preorder(
        TreeSurrogate(
            np.array(feature, dtype=np.int64),
            np.array(threshold),
            np.array(left, dtype=np.int64),
            np.array(right, dtype=np.int64),
            np.array(counts),
            classes,
            Z.shape[1],
            max_depth,
            min_leaf,
        )
    )


def _preorder(t: TreeSurrogate) -> TreeSurrogate:
    order, stack = [], [0]
    while stack:
        nd = stack.pop()
        order.append(nd)
        if t.feature[nd] >= 0:
            stack.append(t.right[nd])
            stack.append(t.left[nd])
    new_id = np.empty(t.n_nodes, dtype=np.int64)
    new_id[order] = np.arange(t.n_nodes)
    o = np.array(order)
    remap = lambda a: np.where(a >= 0, new_id[np.maximum(a, 0)], -1)  # noqa: E731
    return TreeSurrogate(
        t.feature[o], t.threshold[o], remap(t.left[o]), remap(t.right[o]), t.counts[o],
        t.classes, t.n_features, t.max_depth, t.min_leaf,
    )


def fit_tree_tuned(Z, labels, depths=(3, 4, 5, 6), min_leaf: int = 5, val_fraction: float = 0.2,
                   seed: int = 0) -> TreeSurrogate:
    """Pick max_depth by held-out accuracy (ties go to the shallower tree), refit on all rows."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    labels = np.asarray(labels)
    n = len(Z)
    n_val = int(round(val_fraction * n))
    if n_val < 1 or n - n_val < 2 * min_leaf:
        return fit_tree(Z, labels, max(depths), min_leaf)
    perm = np.random.default_rng(seed).permutation(n)
    va, tr = perm[:n_val], perm[n_val:]
    best_d, best_acc = depths[0], -1.0
    for d in depths:
        acc = float(np.mean(fit_tree(Z[tr], labels[tr], d, min_leaf).predict(Z[va]) == labels[va]))
        if acc > best_acc:
            best_d, best_acc = d, acc
    return fit_tree(Z, labels, best_d, min_leaf)


def extract_latent_rule(tree: TreeSurrogate, z) -> LatentRule:
    """Intersect the split conditions along the root-to-leaf path of ``z``."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (tree.n_features,):
        raise DimensionError(f"expected {tree.n_features} latent features")
    lo = np.full(tree.n_features, -np.inf)
    hi = np.full(tree.n_features, np.inf)
    node = 0
    while tree.feature[node] >= 0:
        f, t = tree.feature[node], tree.threshold[node]
        if z[f] <= t:
            hi[f] = min(hi[f], t)
            node = tree.left[node]
        else:
            lo[f] = max(lo[f], t)
            node = tree.right[node]
    return LatentRule(lo, hi)


def surrogate_from_dict(d: dict):
    if d["kind"] == "lr":
        return LogisticSurrogate.from_dict(d)
    if d["kind"] == "dt":
        return TreeSurrogate.from_dict(d)
    raise ValueError(f"unknown surrogate kind {d['kind']!r}")
