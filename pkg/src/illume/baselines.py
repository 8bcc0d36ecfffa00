"""Input-space reference explainers: a global logistic model and a global tree.

Both are fitted directly on the rows and black-box labels.  When the model
disagrees with the black box on an instance, the explanation is taken from
the nearest training row (mixed input distance) that shares the black-box
label and that the model predicts correctly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .explain import AxisRule, NoValidNeighborError
from .surrogate import LogisticSurrogate, TreeSurrogate, fit_logistic, fit_tree_tuned


def _valid_neighbors(x_rows, b_labels, train_X, train_b, train_pred, schema):
    """Index of the nearest valid training row for each query row."""
    out = np.empty(len(x_rows), dtype=np.int64)
    D = geo.pairwise_input_distance(x_rows, schema, train_X)
    agree = train_pred == train_b
    for i, b in enumerate(b_labels):
        ok = np.nonzero(agree & (train_b == b))[0]
        if len(ok) == 0:
            raise NoValidNeighborError(f"no correctly predicted training row with label {b!r}")
        out[i] = ok[np.argmin(D[i, ok])]
    return out


@dataclass
class InputLogistic:
    model: LogisticSurrogate
    X: np.ndarray
    b_labels: np.ndarray
    schema: geo.FeatureSchema

    @classmethod
    def fit(cls, X, b_labels, schema=None) -> "InputLogistic":
        X = np.asarray(X, dtype=np.float64)
        schema = schema or geo.FeatureSchema.all_continuous(X.shape[1])
        return cls(fit_logistic(X, b_labels), X, np.asarray(b_labels), schema)

    def importance(self, X, b_labels, target_class=None) -> np.ndarray:
        """psi_j = beta_j x_j, taken at a valid neighbor where the model disagrees."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        b_labels = np.asarray(b_labels)
        cls = self.model.classes
        target = (cls[1] if len(cls) == 2 else cls[0]) if target_class is None else target_class
        beta = self.model.coefficients(target)
        rows = X.copy()
        bad = np.nonzero(self.model.predict(X) != b_labels)[0]
        if len(bad):
            nn = _valid_neighbors(X[bad], b_labels[bad], self.X, self.b_labels,
                                  self.model.predict(self.X), self.schema)
            rows[bad] = self.X[nn]
        return rows * beta[None, :]


@dataclass
class InputTree:
    model: TreeSurrogate
    X: np.ndarray
    b_labels: np.ndarray
    schema: geo.FeatureSchema

    @classmethod
    def fit(cls, X, b_labels, schema=None, seed: int = 0) -> "InputTree":
        X = np.asarray(X, dtype=np.float64)
        schema = schema or geo.FeatureSchema.all_continuous(X.shape[1])
        return cls(fit_tree_tuned(X, b_labels, seed=seed), X, np.asarray(b_labels), schema)

    def rules(self, X, b_labels) -> list[AxisRule]:
        """Leaf box of each row, or of its valid neighbor where the tree disagrees."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        b_labels = np.asarray(b_labels)
        leaves = self.model.apply(X)
        bad = np.nonzero(self.model.node_label[leaves] != b_labels)[0]
        if len(bad):
            nn = _valid_neighbors(X[bad], b_labels[bad], self.X, self.b_labels,
                                  self.model.predict(self.X), self.schema)
            leaves[bad] = self.model.apply(self.X[nn])
        lo, hi = self.model.node_bounds()
        labels = self.model.node_label
        return [AxisRule(lo[l].copy(), hi[l].copy(), labels[l].item()) for l in leaves]
