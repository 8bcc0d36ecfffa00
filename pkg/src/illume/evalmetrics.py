"""Evaluation measures: correctness, latent quality, robustness, faithfulness.

Explanation-to-explanation comparisons go through a *pair similarity*: a
callable ``sim(I, J)`` returning the similarity of explanations ``I[t]`` and
``J[t]`` for index arrays of equal length.  :func:`importance_pairs` and
:func:`rule_pairs` build them from stacked explanations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import geometry as geo
from . import kernels
from .config import TOL

PairSim = Callable[[np.ndarray, np.ndarray], np.ndarray]


class UndefinedRatioError(ZeroDivisionError):
    """The denominator of a ratio metric is zero."""


# ----------------------------------------------------------------------
# correctness scores
# ----------------------------------------------------------------------
def cs_score(psi, psi_hat) -> float:
    """Cosine similarity of two importance vectors; 0 if either is zero."""
    a = np.asarray(psi, dtype=np.float64).ravel()
    b = np.asarray(psi_hat, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("importance vectors differ in length")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na <= TOL.norm_eps or nb <= TOL.norm_eps:
        return 0.0
    return float(min(1.0, max(-1.0, np.dot(a, b) / (na * nb))))


def _bounds(rule):
    if hasattr(rule, "lower"):
        return np.asarray(rule.lower, dtype=np.float64), np.asarray(rule.upper, dtype=np.float64)
    lo, hi = rule
    return np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)


def _slot_terms(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """1/(1+diff^2) where both bounds are finite, else 0."""
    both = np.isfinite(a) & np.isfinite(b)
    with np.errstate(invalid="ignore"):
        d = np.where(both, a - b, 0.0)
    return np.where(both, 1.0 / (1.0 + d * d), 0.0)


def cplt_score(rho, rho_hat) -> float:
    """Bound proximity of ``rho_hat`` to the reference rule ``rho``.

    Only slots where the reference bound is finite are counted; a predicted
    infinite bound in such a slot scores 0.  With no finite reference slot
    the score is 1 if the prediction is also unbounded everywhere, else 0.
    """
    l, u = _bounds(rho)
    lh, uh = _bounds(rho_hat)
    if l.shape != lh.shape or u.shape != uh.shape:
        raise ValueError("rules differ in dimension")
    ref = np.concatenate([l, u])
    hat = np.concatenate([lh, uh])
    finite = np.isfinite(ref)
    N = int(finite.sum())
    if N == 0:
        return 1.0 if not np.isfinite(hat).any() else 0.0
    return float(_slot_terms(ref, hat)[finite].sum() / N)


def rule_similarity(rho_a, rho_b) -> float:
    """Symmetric cplt variant: slots finite in either rule are counted."""
    la, ua = _bounds(rho_a)
    lb, ub = _bounds(rho_b)
    if la.shape != lb.shape or ua.shape != ub.shape:
        raise ValueError("rules differ in dimension")
    a = np.concatenate([la, ua])
    b = np.concatenate([lb, ub])
    N = int((np.isfinite(a) | np.isfinite(b)).sum())
    if N == 0:
        return 1.0
    return float(_slot_terms(a, b).sum() / N)


# ----------------------------------------------------------------------
# pair similarities over stacked explanations
# ----------------------------------------------------------------------
def importance_pairs(Psi) -> PairSim:
    Psi = np.asarray(Psi, dtype=np.float64)
    norms = np.linalg.norm(Psi, axis=1)

    def sim(I, J):
        I, J = np.asarray(I), np.asarray(J)
        num = np.einsum("ij,ij->i", Psi[I], Psi[J])
        den = norms[I] * norms[J]
        ok = (norms[I] > TOL.norm_eps) & (norms[J] > TOL.norm_eps)
        return np.where(ok, np.clip(num / np.where(ok, den, 1.0), -1.0, 1.0), 0.0)

    return sim


def rule_pairs(Lo, Hi) -> PairSim:
    B = np.concatenate([np.asarray(Lo, dtype=np.float64), np.asarray(Hi, dtype=np.float64)], axis=1)
    fin = np.isfinite(B)

    def sim(I, J):
        I, J = np.asarray(I), np.asarray(J)
        a, b = B[I], B[J]
        N = (fin[I] | fin[J]).sum(axis=1)
        tot = _slot_terms(a, b).sum(axis=1)
        return np.where(N > 0, tot / np.maximum(N, 1), 1.0)

    return sim


def _upper_pairs(n: int):
    return np.triu_indices(n, k=1)


# ----------------------------------------------------------------------
# rank correlation
# ----------------------------------------------------------------------
def spearman(a, b) -> tuple[float, bool]:
    """Spearman correlation with average ranks for ties.

    Returns ``(rho, degenerate)``; a constant input yields ``(0.0, True)``.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("samples differ in length")
    if a.size < 2:
        return 0.0, True
    ra = kernels.average_ranks(a)
    rb = kernels.average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    den = math.sqrt(float(np.dot(ra, ra)) * float(np.dot(rb, rb)))
    if den == 0.0:
        return 0.0, True
    return float(np.clip(np.dot(ra, rb) / den, -1.0, 1.0)), False


# ----------------------------------------------------------------------
# latent-space quality
# ----------------------------------------------------------------------
def knn_accuracy(D, labels, K: int = 5) -> float:
    """Leave-one-out K-NN accuracy from a full distance matrix."""
    D = np.asarray(D, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(labels)
    if D.shape != (n, n):
        raise ValueError("distance matrix does not match labels")
    if not 0 < K < n:
        raise ValueError(f"need 0 < K < n, got K={K}, n={n}")
    classes, y = np.unique(labels, return_inverse=True)
    y = y.ravel()
    pred = kernels.knn_loo_predict(D, y, len(classes), K)
    return float(np.mean(pred == y))


def knn_gain(X, Z, labels, K: int = 5, schema: geo.FeatureSchema | None = None) -> float:
    """LOO K-NN accuracy with cosine distance on Z over that with the input distance on X."""
    X = np.asarray(X, dtype=np.float64)
    schema = schema or geo.FeatureSchema.all_continuous(X.shape[1])
    acc_x = knn_accuracy(geo.pairwise_input_distance(X, schema), labels, K)
    if acc_x == 0.0:
        raise UndefinedRatioError("K-NN accuracy in the input space is zero")
    acc_z = knn_accuracy(geo.pairwise_cosine(Z), labels, K)
    return acc_z / acc_x


def sample_triplets(n: int, n_triplets: int, seed: int = 0) -> np.ndarray:
    """(n_triplets, 3) anchors i with two distinct other points j, v."""
    if n < 3:
        raise ValueError("triplets need at least three points")
    rng = np.random.default_rng(seed)
    i = rng.integers(n, size=n_triplets)
    j = rng.integers(n - 1, size=n_triplets)
    j = j + (j >= i)
    v = rng.integers(n - 2, size=n_triplets)
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    v = v + (v >= lo)
    v = v + (v >= hi)
    return np.column_stack([i, j, v])


def triplet_agreement(D_a, D_b, triplets) -> float:
    """Fraction of triplets whose ordering sign(d(i,j) - d(i,v)) matches."""
    D_a = np.asarray(D_a, dtype=np.float64)
    D_b = np.asarray(D_b, dtype=np.float64)
    i, j, v = np.asarray(triplets).T
    sa = np.sign(D_a[i, j] - D_a[i, v])
    sb = np.sign(D_b[i, j] - D_b[i, v])
    return float(np.mean(sa == sb))


def triplet_accuracy(dist_a, dist_b, points_a, points_b=None, n_triplets: int = 20000, seed: int = 0) -> float:
    """Ordering agreement of two pairwise distance functions.

    ``dist_a``/``dist_b`` map an (n, d) array to an (n, n) matrix;
    ``points_b`` defaults to ``points_a``.
    """
    points_b = points_a if points_b is None else points_b
    D_a, D_b = dist_a(points_a), dist_b(points_b)
    return triplet_agreement(D_a, D_b, sample_triplets(len(D_a), n_triplets, seed))


def pairwise_euclidean(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    sq = np.sum(A * A, axis=1)
    D2 = sq[:, None] + sq[None, :] - 2.0 * A @ A.T
    D = np.sqrt(np.maximum(D2, 0.0))
    np.fill_diagonal(D, 0.0)
    return D


# ----------------------------------------------------------------------
# robustness and faithfulness
# ----------------------------------------------------------------------
@dataclass
class SensitivityResult:
    scores: np.ndarray  # NaN where excluded
    truncated: np.ndarray  # fewer than K_max same-label neighbors
    excluded: np.ndarray  # no same-label neighbor at all


def robustness_max_sensitivity(sim: PairSim, D, labels, K_max: int = 20) -> SensitivityResult:
    """Mean over K = 1..K_max of the least similar explanation among the K
    nearest same-label neighbors (distance ties go to the lower index)."""
    D = np.asarray(D, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(labels)
    S = np.full((n, K_max), np.inf)
    lengths = np.zeros(n, dtype=np.int64)
    for i in range(n):
        cand = np.nonzero(labels == labels[i])[0]
        cand = cand[cand != i]
        if len(cand) == 0:
            continue
        nb = cand[np.argsort(D[i, cand], kind="stable")[:K_max]]
        lengths[i] = len(nb)
        S[i, : len(nb)] = sim(np.full(len(nb), i), nb)
    scores = kernels.running_min_mean(S, lengths)
    return SensitivityResult(scores, (lengths > 0) & (lengths < K_max), lengths == 0)


def faithfulness(sim: PairSim, outputs) -> tuple[float, bool]:
    """Spearman between explanation distances 1 - sim and output distances."""
    B = np.asarray(outputs, dtype=np.float64)
    if B.ndim == 1:
        B = B[:, None]
    if len(B) < 3:
        raise ValueError("faithfulness needs at least three instances")
    I, J = _upper_pairs(len(B))
    d_e = 1.0 - sim(I, J)
    d_b = np.linalg.norm(B[I] - B[J], axis=1)
    return spearman(d_e, d_b)


def global_robustness(sim: PairSim, D_input, labels) -> tuple[float, bool]:
    """Spearman between 1 - sim and input distances over same-label pairs."""
    D_input = np.asarray(D_input, dtype=np.float64)
    labels = np.asarray(labels)
    I, J = _upper_pairs(len(labels))
    keep = labels[I] == labels[J]
    I, J = I[keep], J[keep]
    if len(I) < 3:
        raise ValueError("global robustness needs at least three same-label pairs")
    return spearman(1.0 - sim(I, J), D_input[I, J])


# ----------------------------------------------------------------------
# reports
# ----------------------------------------------------------------------
def median_absolute_deviation(v) -> float:
    v = np.asarray(v, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return float("nan")
    return float(np.median(np.abs(v - np.median(v))))


@dataclass
class MetricReport:
    metric: str
    per_instance: np.ndarray
    config: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        v = np.asarray(self.per_instance, dtype=np.float64)
        v = v[np.isfinite(v)]
        return float(v.mean()) if v.size else float("nan")

    @property
    def mad(self) -> float:
        return median_absolute_deviation(self.per_instance)

    def to_dict(self) -> dict:
        def num(x):
            return None if not np.isfinite(x) else float(x)

        return {
            "metric": self.metric,
            "config": self.config,
            "per_instance": [num(x) for x in np.asarray(self.per_instance, dtype=np.float64)],
            "mean": num(self.mean),
            "mad": num(self.mad),
            "flags": self.flags,
        }
