"""Distances and Gaussian neighbor distributions.

Plain-numpy versions serve the metrics; the ``*_t`` variants build
differentiable graphs for the training losses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .config import TOL


@dataclass(frozen=True)
class FeatureSchema:
    """Column layout after one-hot expansion."""

    m: int
    continuous_indices: tuple[int, ...]
    categorical_groups: tuple[tuple[int, ...], ...] = ()
    names: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        cat = [j for g in self.categorical_groups for j in g]
        seen = sorted(list(self.continuous_indices) + cat)
        if seen != list(range(self.m)):
            raise ValueError("continuous and categorical columns must partition 0..m-1")

    @property
    def h(self) -> int:
        return sum(len(g) for g in self.categorical_groups)

    @property
    def categorical_indices(self) -> tuple[int, ...]:
        return tuple(j for g in self.categorical_groups for j in g)

    @classmethod
    def all_continuous(cls, m: int, names=()) -> "FeatureSchema":
        return cls(m, tuple(range(m)), (), tuple(names))

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "continuous_indices": list(self.continuous_indices),
            "categorical_groups": [list(g) for g in self.categorical_groups],
            "names": list(self.names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(
            int(d["m"]),
            tuple(d["continuous_indices"]),
            tuple(tuple(g) for g in d["categorical_groups"]),
            tuple(d.get("names", ())),
        )


# ----------------------------------------------------------------------
# point distances
# ----------------------------------------------------------------------
def cosine_distance(u, v) -> float:
    """1 - cos(u, v); a zero vector is at distance 1 from everything."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise dc.DimensionError(f"length mismatch {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu <= TOL.norm_eps or nv <= TOL.norm_eps:
        return 1.0
    sim = float(np.dot(u, v) / (nu * nv))
    return 1.0 - min(1.0, max(-1.0, sim))


def hamming_distance(u, v) -> float:
    u = np.asarray(u).ravel()
    v = np.asarray(v).ravel()
    if u.shape != v.shape:
        raise dc.DimensionError(f"length mismatch {u.shape} vs {v.shape}")
    if u.size == 0:
        return 0.0
    return float(np.mean(u != v))


def input_distance(x_i, x_j, schema: FeatureSchema) -> float:
    """Mixed distance: cosine on continuous columns, Hamming on one-hot columns,
    weighted by their share of the m columns."""
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    if x_i.shape != (schema.m,) or x_j.shape != (schema.m,):
        raise dc.DimensionError("vectors do not conform to the schema")
    m, h = schema.m, schema.h
    d = 0.0
    if m - h > 0:
        cont = list(schema.continuous_indices)
        d += (m - h) / m * cosine_distance(x_i[cont], x_j[cont])
    if h > 0:
        cat = list(schema.categorical_indices)
        d += h / m * hamming_distance(x_i[cat], x_j[cat])
    return d


def transform_distance(W_a, W_b) -> float:
    """Mean per-column cosine distance between two m x k transforms."""
    W_a = np.asarray(W_a, dtype=np.float64)
    W_b = np.asarray(W_b, dtype=np.float64)
    if W_a.shape != W_b.shape:
        raise dc.DimensionError(f"shape mismatch {W_a.shape} vs {W_b.shape}")
    k = W_a.shape[1]
    return sum(cosine_distance(W_a[:, r], W_b[:, r]) for r in range(k)) / k


# ----------------------------------------------------------------------
# pairwise matrices (numpy)
# ----------------------------------------------------------------------
def _unit_rows(A: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(A, axis=-1, keepdims=True)
    return np.where(norms > TOL.norm_eps, A / np.maximum(norms, TOL.norm_eps), 0.0)


def pairwise_cosine(A, B=None) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    Ua = _unit_rows(A)
    Ub = Ua if B is None else _unit_rows(np.asarray(B, dtype=np.float64))
    return 1.0 - np.clip(Ua @ Ub.T, -1.0, 1.0)


def pairwise_hamming(A, B=None) -> np.ndarray:
    A = np.asarray(A)
    B = A if B is None else np.asarray(B)
    if A.shape[1] == 0:
        return np.zeros((A.shape[0], B.shape[0]))
    return (A[:, None, :] != B[None, :, :]).mean(axis=2)


def pairwise_input_distance(X, schema: FeatureSchema, Y=None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    Y = X if Y is None else np.asarray(Y, dtype=np.float64)
    m, h = schema.m, schema.h
    D = np.zeros((X.shape[0], Y.shape[0]))
    if m - h > 0:
        cont = list(schema.continuous_indices)
        D += (m - h) / m * pairwise_cosine(X[:, cont], Y[:, cont])
    if h > 0:
        cat = list(schema.categorical_indices)
        D += h / m * pairwise_hamming(X[:, cat], Y[:, cat])
    return D


def pairwise_transform_distance(Ws) -> np.ndarray:
    """(n, m, k) stack of transforms -> (n, n) mean per-column cosine distance."""
    Ws = np.asarray(Ws, dtype=np.float64)
    cols = _unit_rows(np.transpose(Ws, (2, 0, 1)))  # (k, n, m)
    sims = np.clip(cols @ np.transpose(cols, (0, 2, 1)), -1.0, 1.0)
    return 1.0 - sims.mean(axis=0)


def neighbor_distribution(pairwise_distances) -> np.ndarray:
    """Row-normalized Gaussian kernel exp(-d^2) with self-probability zero."""
    D = np.asarray(pairwise_distances, dtype=np.float64)
    n = D.shape[0]
    if D.ndim != 2 or D.shape[1] != n:
        raise dc.DimensionError("pairwise distances must be square")
    if n < 2:
        raise dc.ContractError("a neighbor distribution needs at least two points")
    logits = -(D * D)
    np.fill_diagonal(logits, -np.inf)
    logits -= logits.max(axis=1, keepdims=True)
    E = np.exp(logits)
    return E / E.sum(axis=1, keepdims=True)


def kl_row(p, q) -> float:
    """sum p log(p/q) with 0 log 0 = 0 and q clamped below."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise dc.DimensionError("rows differ in length")
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / np.maximum(q[nz], TOL.kl_eps))))


# ----------------------------------------------------------------------
# differentiable counterparts
# ----------------------------------------------------------------------
def _unit_rows_t(A: dc.Tensor) -> dc.Tensor:
    sq = dc.tsum(dc.square(A), axis=-1, keepdims=True)
    return A / dc.sqrt(dc.clamp_min(sq, TOL.norm_eps**2))


def pairwise_cosine_t(Z: dc.Tensor) -> dc.Tensor:
    U = _unit_rows_t(Z)
    return 1.0 - U @ U.T


def pairwise_transform_t(W: dc.Tensor) -> dc.Tensor:
    cols = _unit_rows_t(dc.transpose(W, (2, 0, 1)))
    sims = cols @ dc.swapaxes(cols)
    return 1.0 - dc.mean(sims, axis=0)


def neighbor_distribution_t(D) -> dc.Tensor:
    D = dc.as_tensor(D)
    n = D.shape[0]
    if n < 2:
        raise dc.ContractError("a neighbor distribution needs at least two points")
    logits = dc.neg(dc.square(D))
    off = 1.0 - np.eye(n)
    # constant shift: row max over off-diagonal entries
    raw = np.where(off > 0, logits.data, -np.inf)
    shift = raw.max(axis=1, keepdims=True)
    E = dc.exp(logits - shift) * off
    return E / dc.tsum(E, axis=1, keepdims=True)


def kl_rows_t(P, Q) -> dc.Tensor:
    """Per-row KL(P_i || Q_i) as an (n,) tensor."""
    P, Q = dc.as_tensor(P), dc.as_tensor(Q)
    logp = dc.log(dc.clamp_min(P, TOL.kl_eps))
    logq = dc.log(dc.clamp_min(Q, TOL.kl_eps))
    return dc.tsum(P * (logp - logq), axis=1)
