"""Turn surrogate logic on latent codes into input-space explanations.

Conventions: a transform ``W`` is m x k and acts on ``x`` as ``z = W^T x``.
Latent intervals are (lower, upper]; axis rules are reported as closed
boxes and always contain the instance they explain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import geometry as geo
from . import kernels
from .config import TOL
from .diffcore import ContractError, DimensionError
from .metaenc import sparsify_topk
from .surrogate import LatentRule, LogisticSurrogate, TreeSurrogate


class NoValidNeighborError(LookupError):
    """No training point shares the black-box label and is predicted correctly."""


class NoCounterfactualError(LookupError):
    pass


# ----------------------------------------------------------------------
# explanation records
# ----------------------------------------------------------------------
@dataclass
class RefinementResult:
    gamma_w: float
    gamma_x: float
    W_star: np.ndarray
    eps_star: np.ndarray
    z_star: np.ndarray
    neighbor: int
    fallback: bool = False


@dataclass
class FeatureImportance:
    psi: np.ndarray
    target_class: Any
    valid: bool | None
    refinement: RefinementResult | None = None


@dataclass
class AxisRule:
    lower: np.ndarray
    upper: np.ndarray
    predicted_class: Any = None

    def contains(self, x, slack: float = 0.0) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all((self.lower - slack <= x) & (x <= self.upper + slack)))

    def to_json(self) -> dict:
        return {"lower": [_fmt(v) for v in self.lower], "upper": [_fmt(v) for v in self.upper]}

    @classmethod
    def from_json(cls, d, predicted_class=None) -> "AxisRule":
        return cls(np.array([_unfmt(v) for v in d["lower"]]), np.array([_unfmt(v) for v in d["upper"]]),
                   predicted_class)


@dataclass
class ObliqueRule:
    W: np.ndarray  # (m, k)
    lower: np.ndarray
    upper: np.ndarray

    def contains(self, x) -> bool:
        z = np.asarray(self.W).T @ np.asarray(x, dtype=np.float64)
        return bool(np.all((self.lower < z) & (z <= self.upper)))


@dataclass
class CounterfactualExplanation:
    rule: AxisRule
    example_index: int
    example_row: np.ndarray
    n_changes: int
    latent_rule: LatentRule = field(repr=False, default=None)


@dataclass
class Explanation:
    instance_id: Any
    kind: str
    cls: Any
    valid: bool | None
    psi: np.ndarray | None = None
    rule: AxisRule | None = None
    counterfactual: CounterfactualExplanation | None = None
    refinement: RefinementResult | None = None
    error: str | None = None

    def to_json(self) -> dict:
        out: dict = {
            "instance_id": _plain(self.instance_id),
            "kind": self.kind,
            "class": _plain(self.cls),
            "valid": self.valid,
        }
        if self.psi is not None:
            out["psi"] = [float(v) for v in self.psi]
        if self.rule is not None:
            out["rule"] = self.rule.to_json()
        if self.counterfactual is not None:
            cf = self.counterfactual
            out["counterfactual"] = {
                "rule": cf.rule.to_json(),
                "example_row": [float(v) for v in cf.example_row],
                "example_index": int(cf.example_index),
                "n_changes": int(cf.n_changes),
            }
        out["refinement"] = (
            None
            if self.refinement is None
            else {"gamma_w": self.refinement.gamma_w, "gamma_x": self.refinement.gamma_x}
        )
        if self.error is not None:
            out["error"] = self.error
        return out


def _fmt(v: float):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


def _unfmt(v) -> float:
    # float() parses the "inf"/"-inf" sentinels as well
    return float(v)


def _plain(v):
    if isinstance(v, np.generic):
        return v.item()
    return v


# ----------------------------------------------------------------------
# latent store
# ----------------------------------------------------------------------
@dataclass
class LatentStore:
    """Frozen training encodings used for neighbor search.

    ``transform`` maps rows of X to their sparsified transforms; the store
    keeps only inputs and latents and regenerates W on demand.
    """

    X: np.ndarray
    Z: np.ndarray
    bb_labels: np.ndarray
    sur_labels: np.ndarray
    transform: Any = field(repr=False, default=None)

    @property
    def agree(self) -> np.ndarray:
        return self.sur_labels == self.bb_labels

    def W(self, idx) -> np.ndarray:
        return self.transform(self.X[np.atleast_1d(idx)])


# ----------------------------------------------------------------------
# feature importance
# ----------------------------------------------------------------------
def importance_pullback(W, beta) -> np.ndarray:
    """psi_j = sum_r beta_r W_jr."""
    W = np.asarray(W, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if W.shape[-1] != beta.shape[0]:
        raise DimensionError(f"transform has {W.shape[-1]} columns, beta has {beta.shape[0]}")
    return W @ beta


def refined_importance(refinement: RefinementResult, beta) -> np.ndarray:
    return importance_pullback(refinement.W_star, beta)


# ----------------------------------------------------------------------
# rules
# ----------------------------------------------------------------------
def latent_to_oblique(rule: LatentRule, W) -> ObliqueRule:
    W = np.asarray(W, dtype=np.float64)
    if W.shape[1] != len(rule.lower):
        raise DimensionError("latent rule and transform disagree on k")
    return ObliqueRule(W, np.asarray(rule.lower), np.asarray(rule.upper))


def _check_inside(lo, hi, z):
    if np.any(z < lo - TOL.rule_slack) or np.any(z > hi + TOL.rule_slack):
        raise ContractError("latent point lies outside the latent rule")


def oblique_to_axis(rule: LatentRule, W, x, z, predicted_class=None) -> AxisRule:
    """Isolate each input feature in the oblique conditions of ``rule``.

    For every feature the most restrictive condition over the k latent
    dimensions wins.  Zero weights contribute nothing; negative weights
    swap the roles of the lower and upper latent bounds.
    """
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    lo, hi = np.asarray(rule.lower, dtype=np.float64), np.asarray(rule.upper, dtype=np.float64)
    if W.shape != (len(x), len(z)):
        raise DimensionError("transform shape does not match x and z")
    _check_inside(lo, hi, z)
    a, b = kernels.axis_offsets(W[None], z[None], lo[None], hi[None])
    return AxisRule(x + a[0], x + b[0], predicted_class)


def axis_rules_batch(W, X, Z, lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`oblique_to_axis` over rows; returns (lower, upper)."""
    a, b = kernels.axis_offsets(W, Z, lo, hi)
    return X + a, X + b


def refined_rule(refinement: RefinementResult, rule: LatentRule, x, predicted_class=None) -> AxisRule:
    """Axis rule of the refined transform.

    Shifting the latent bounds by the offset and evaluating at W*^T x is the
    same as keeping the bounds and evaluating at z*; the latter avoids
    extra rounding.
    """
    return oblique_to_axis(rule, refinement.W_star, x, refinement.z_star, predicted_class)


# ----------------------------------------------------------------------
# fidelity refinement
# ----------------------------------------------------------------------
def nearest_valid_neighbor(z, b_label, store: LatentStore) -> int:
    ok = np.nonzero(store.agree & (store.bb_labels == b_label))[0]
    if len(ok) == 0:
        raise NoValidNeighborError(f"no correctly surrogate-predicted training point with label {b_label!r}")
    d = geo.pairwise_cosine(np.asarray(z, dtype=np.float64)[None], store.Z[ok])[0]
    return int(ok[np.argmin(d)])


def refine_fidelity(x, z, W, surrogate, b_label, store: LatentStore, grid: int = 20,
                    alpha: int | None = None) -> RefinementResult:
    """Move z toward its nearest valid neighbor until the surrogate agrees.

    Candidates are z(gw, gx) = (W + gw (W_nn - W))^T x + gx W_nn^T (x_nn - x)
    on a grid over (0, 1]^2.  The feasible candidate closest to z wins, ties
    going to the smallest gw + gx.  With ``alpha`` below m the refined
    transform is re-sparsified and the offset absorbs the dropped mass, so
    z* is unchanged and the transform keeps at most alpha entries per column.
    """
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    nn = nearest_valid_neighbor(z, b_label, store)
    W_nn = store.W(nn)[0]
    x_nn = store.X[nn]
    dW = W_nn - W
    move_w = dW.T @ x
    move_x = W_nn.T @ (x_nn - x)
    g = np.arange(1, grid + 1) / grid
    gw, gx = np.meshgrid(g, g, indexing="ij")
    gw, gx = gw.ravel(), gx.ravel()
    base = W.T @ x
    cand = base[None, :] + gw[:, None] * move_w[None, :] + gx[:, None] * move_x[None, :]
    feasible = surrogate.predict(cand) == b_label
    if feasible.any():
        cost = np.sum((cand - z[None, :]) ** 2, axis=1)
        idx = np.nonzero(feasible)[0]
        best = idx[np.lexsort((gw[idx], gw[idx] + gx[idx], cost[idx]))[0]]
        gw_s, gx_s = float(gw[best]), float(gx[best])
        z_star = cand[best].copy()
        fallback = False
    else:
        # rounding pushed the (1, 1) corner off z_nn; snap to it exactly
        gw_s = gx_s = 1.0
        z_star = store.Z[nn].copy()
        fallback = True
    W_star = W + gw_s * dW
    eps_star = z_star - W_star.T @ x if fallback else gx_s * move_x
    if alpha is not None and alpha < W.shape[0]:
        W_star = sparsify_topk(W_star[None], alpha)[0]
        eps_star = z_star - W_star.T @ x
    return RefinementResult(gw_s, gx_s, W_star, eps_star, z_star, nn, fallback)


# ----------------------------------------------------------------------
# counterfactual rules
# ----------------------------------------------------------------------
def counterfactual(z, tree: TreeSurrogate, store: LatentStore) -> CounterfactualExplanation:
    """Closest rule of another class, counted in changed latent conditions.

    Training points predicted differently from ``z`` are ranked by cosine
    similarity; among them the leaf rule differing from ``z``'s leaf in the
    fewest latent dimensions wins (similarity breaks ties).  The rule is
    expressed in input space through the counter-example's own transform.
    """
    z = np.asarray(z, dtype=np.float64)
    own_leaf = tree.apply(z[None])[0]
    own_pred = tree.node_label[own_leaf]
    cand = np.nonzero(store.sur_labels != own_pred)[0]
    if len(cand) == 0:
        raise NoCounterfactualError("every training point shares the surrogate prediction")
    d = geo.pairwise_cosine(z[None], store.Z[cand])[0]
    cand = cand[np.argsort(d, kind="stable")]
    lo, hi = tree.node_bounds()
    leaves = tree.apply(store.Z[cand])
    changes = np.sum((lo[leaves] != lo[own_leaf]) | (hi[leaves] != hi[own_leaf]), axis=1)
    pick = int(np.argmin(changes))  # first minimum = most similar
    ce = int(cand[pick])
    leaf = leaves[pick]
    lrule = LatentRule(lo[leaf].copy(), hi[leaf].copy())
    W_ce = store.W(ce)[0]
    rule = oblique_to_axis(lrule, W_ce, store.X[ce], store.Z[ce], tree.node_label[leaf])
    return CounterfactualExplanation(rule, ce, store.X[ce].copy(), int(changes[pick]), lrule)


# ----------------------------------------------------------------------
# explanation generator
# ----------------------------------------------------------------------
class Explainer:
    """Explanation generator over a frozen encoder, surrogate and latent store.

    ``encoder`` needs ``sparse_transforms(X)`` returning (n, m, k).
    """

    def __init__(self, encoder, surrogate, store: LatentStore, target_class=None, grid: int = 20):
        self.encoder = encoder
        self.surrogate = surrogate
        self.store = store
        self.grid = grid
        if target_class is None:
            classes = surrogate.classes
            target_class = classes[1] if len(classes) == 2 else classes[0]
        self.target_class = target_class

    def explain_many(self, X, b_labels=None, kind: str = "importance", ids=None) -> list[Explanation]:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        n = len(X)
        ids = list(range(n)) if ids is None else list(ids)
        if n == 0:
            return []
        if kind not in ("importance", "rule", "counterfactual"):
            raise ValueError(f"unknown explanation kind {kind!r}")
        if kind == "importance" and not isinstance(self.surrogate, LogisticSurrogate):
            raise ValueError("importance explanations need a logistic surrogate")
        if kind in ("rule", "counterfactual") and not isinstance(self.surrogate, TreeSurrogate):
            raise ValueError("rule explanations need a tree surrogate")
        W = self.encoder.sparse_transforms(X)
        Z = np.einsum("nmk,nm->nk", W, X)
        pred = self.surrogate.predict(Z)
        out: list[Explanation] = []
        refs: list[RefinementResult | None] = [None] * n
        valid: list[bool | None] = [None] * n
        errors: list[str | None] = [None] * n
        for i in range(n):
            if b_labels is None:
                continue
            b = b_labels[i]
            if pred[i] == b:
                valid[i] = True
                continue
            try:
                refs[i] = refine_fidelity(X[i], Z[i], W[i], self.surrogate, b, self.store, self.grid,
                                          getattr(self.encoder, "alpha", None))
                valid[i] = True
            except NoValidNeighborError as exc:
                valid[i] = False
                errors[i] = str(exc)

        W_eff = W.copy()
        Z_eff = Z.copy()
        for i, r in enumerate(refs):
            if r is not None:
                W_eff[i] = r.W_star
                Z_eff[i] = r.z_star

        if kind == "importance":
            beta = self.surrogate.coefficients(self.target_class)
            psi = W_eff @ beta
            for i in range(n):
                out.append(Explanation(ids[i], kind, _plain(self.target_class), valid[i], psi=psi[i],
                                       refinement=refs[i], error=errors[i]))
            return out

        tree: TreeSurrogate = self.surrogate
        leaves = tree.apply(Z_eff)
        lo_all, hi_all = tree.node_bounds()
        lo, hi = lo_all[leaves], hi_all[leaves]
        lower, upper = axis_rules_batch(W_eff, X, Z_eff, lo, hi)
        labels = tree.node_label[leaves]
        for i in range(n):
            cls = _plain(labels[i])
            if kind == "rule":
                out.append(Explanation(ids[i], kind, cls, valid[i], rule=AxisRule(lower[i], upper[i], cls),
                                       refinement=refs[i], error=errors[i]))
            else:
                try:
                    cf = counterfactual(Z_eff[i], tree, self.store)
                    out.append(Explanation(ids[i], kind, cls, valid[i], counterfactual=cf,
                                           refinement=refs[i], error=errors[i]))
                except NoCounterfactualError as exc:
                    out.append(Explanation(ids[i], kind, cls, valid[i], refinement=refs[i], error=str(exc)))
        return out

    def explain(self, x, b_label=None, kind: str = "importance", instance_id=0) -> Explanation:
        b = None if b_label is None else [b_label]
        return self.explain_many(np.asarray(x, dtype=np.float64)[None], b, kind, [instance_id])[0]
