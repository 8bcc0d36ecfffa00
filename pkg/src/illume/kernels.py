"""Hot inner loops, each with a numba kernel and a numpy twin.

The public functions dispatch on :func:`illume._accel.backend`.  Both
paths implement the same conventions (tie-breaks, threshold placement)
so results agree exactly on integer outputs and to rounding on floats.
"""

import numpy as np

from ._accel import backend, njit

# ----------------------------------------------------------------------
# CART split search
# ----------------------------------------------------------------------


@njit
def _best_split_nb(X, y, n_classes, min_leaf):
    n, k = X.shape
    best_f = -1
    best_thr = 0.0
    best_imp = np.inf
    total = np.zeros(n_classes)
    for i in range(n):
        total[y[i]] += 1.0
    left = np.zeros(n_classes)
    for f in range(k):
        col = X[:, f]
        order = np.argsort(col, kind="mergesort")
        for c in range(n_classes):
            left[c] = 0.0
        for i in range(n - 1):
            left[y[order[i]]] += 1.0
            v0 = col[order[i]]
            v1 = col[order[i + 1]]
            if v0 == v1:
                continue
            nl = i + 1
            nr = n - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            sl = 0.0
            sr = 0.0
            for c in range(n_classes):
                sl += left[c] * left[c]
                rc = total[c] - left[c]
                sr += rc * rc
            imp = (nl - sl / nl) + (nr - sr / nr)
            if imp < best_imp:
                best_imp = imp
                best_f = f
                thr = 0.5 * (v0 + v1)
                if thr >= v1:
                    thr = v0
                best_thr = thr
    return best_f, best_thr, best_imp / n


def _best_split_np(X, y, n_classes, min_leaf):
    n, k = X.shape
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    total = onehot.sum(axis=0)
    best = (-1, 0.0, np.inf)
    for f in range(k):
        col = X[:, f]
        order = np.argsort(col, kind="mergesort")
        v = col[order]
        cl = np.cumsum(onehot[order], axis=0)[:-1]
        cr = total[None, :] - cl
        nl = np.arange(1, n, dtype=np.float64)
        nr = n - nl
        ok = (v[:-1] != v[1:]) & (nl >= min_leaf) & (nr >= min_leaf)
        if not ok.any():
            continue
        sl = np.zeros(n - 1)
        sr = np.zeros(n - 1)
        for c in range(n_classes):
            sl += cl[:, c] * cl[:, c]
            sr += cr[:, c] * cr[:, c]
        imp = (nl - sl / nl) + (nr - sr / nr)
        imp = np.where(ok, imp, np.inf)
        i = int(np.argmin(imp))
        if imp[i] < best[2]:
            thr = 0.5 * (v[i] + v[i + 1])
            if thr >= v[i + 1]:
                thr = v[i]
            best = (f, thr, imp[i])
    return best[0], best[1], best[2] / n


def best_split(X, y, n_classes, min_leaf):
    """Best Gini split of a node: ``(feature, threshold, weighted impurity)``.

    ``feature`` is -1 when no admissible split exists.  The left child
    takes ``X[:, feature] <= threshold``.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    if X.shape[0] < 2:
        return -1, 0.0, np.inf
    if backend() == "numba":
        f, t, imp = _best_split_nb(X, y, int(n_classes), int(min_leaf))
    else:
        f, t, imp = _best_split_np(X, y, int(n_classes), int(min_leaf))
    return int(f), float(t), float(imp)


# ----------------------------------------------------------------------
# tree traversal
# ----------------------------------------------------------------------


@njit
def _tree_apply_nb(X, feature, threshold, left, right):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


def _tree_apply_np(X, feature, threshold, left, right):
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int64)
    active = feature[node] >= 0
    while active.any():
        rows = np.nonzero(active)[0]
        nd = node[rows]
        go_left = X[rows, feature[nd]] <= threshold[nd]
        node[rows] = np.where(go_left, left[nd], right[nd])
        active = feature[node] >= 0
    return node


def tree_apply(X, feature, threshold, left, right):
    """Leaf index reached by every row of ``X``."""
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    args = (
        X,
        np.ascontiguousarray(feature, dtype=np.int64),
        np.ascontiguousarray(threshold, dtype=np.float64),
        np.ascontiguousarray(left, dtype=np.int64),
        np.ascontiguousarray(right, dtype=np.int64),
    )
    if backend() == "numba":
        return _tree_apply_nb(*args)
    return _tree_apply_np(*args)


# ----------------------------------------------------------------------
# oblique -> axis-parallel bound offsets
# ----------------------------------------------------------------------


@njit
def _axis_offsets_nb(W, z, lo, hi):
    n, m, k = W.shape
    low = np.empty((n, m))
    up = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            a = -np.inf
            b = np.inf
            for r in range(k):
                w = W[i, j, r]
                if w == 0.0:
                    continue
                if w > 0.0:
                    if np.isfinite(lo[i, r]):
                        c = (lo[i, r] - z[i, r]) / w
                        if c > a:
                            a = c
                    if np.isfinite(hi[i, r]):
                        c = (hi[i, r] - z[i, r]) / w
                        if c < b:
                            b = c
                else:
                    if np.isfinite(hi[i, r]):
                        c = (hi[i, r] - z[i, r]) / w
                        if c > a:
                            a = c
                    if np.isfinite(lo[i, r]):
                        c = (lo[i, r] - z[i, r]) / w
                        if c < b:
                            b = c
            low[i, j] = a
            up[i, j] = b
    return low, up


def _axis_offsets_np(W, z, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        dl = (lo - z)[:, None, :] / W
        dh = (hi - z)[:, None, :] / W
    pos = W > 0
    neg = W < 0
    lo_ok = np.isfinite(lo)[:, None, :]
    hi_ok = np.isfinite(hi)[:, None, :]
    lower = np.where(pos & lo_ok, dl, np.where(neg & hi_ok, dh, -np.inf))
    upper = np.where(pos & hi_ok, dh, np.where(neg & lo_ok, dl, np.inf))
    return lower.max(axis=2), upper.min(axis=2)


def axis_offsets(W, z, lo, hi):
    """Per-feature offsets from ``x`` to the axis-parallel rule bounds.

    Shapes: ``W`` (n, m, k), ``z``/``lo``/``hi`` (n, k).  Returns two
    (n, m) arrays; ``x + lower`` and ``x + upper`` are the rule bounds.
    A negative weight swaps which latent bound limits from below.
    """
    args = tuple(np.ascontiguousarray(a, dtype=np.float64) for a in (W, z, lo, hi))
    if backend() == "numba":
        return _axis_offsets_nb(*args)
    return _axis_offsets_np(*args)


# ----------------------------------------------------------------------
# ranks
# ----------------------------------------------------------------------


@njit
def _average_ranks_nb(v, order):
    n = v.shape[0]
    ranks = np.empty(n)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and v[order[j + 1]] == v[order[i]]:
            j += 1
        r = 0.5 * (i + j) + 1.0
        for t in range(i, j + 1):
            ranks[order[t]] = r
        i = j + 1
    return ranks


def _average_ranks_np(v):
    _, inv, counts = np.unique(v, return_inverse=True, return_counts=True)
    start = np.concatenate(([0], np.cumsum(counts)[:-1]))
    return (start + 0.5 * (counts - 1) + 1.0)[inv.ravel()]


def average_ranks(v):
    """1-based ranks with ties sharing their average rank."""
    v = np.ascontiguousarray(v, dtype=np.float64).ravel()
    if backend() == "numba":
        # numpy's sort is faster than numba's on heavily tied data; tie order
        # within the sort is irrelevant because tied values share one rank
        return _average_ranks_nb(v, np.argsort(v))
    return _average_ranks_np(v)


# ----------------------------------------------------------------------
# leave-one-out k-NN votes
# ----------------------------------------------------------------------


@njit
def _knn_loo_nb(D, labels, n_classes, K):
    n = D.shape[0]
    pred = np.empty(n, dtype=np.int64)
    votes = np.zeros(n_classes)
    best_d = np.empty(K)
    best_j = np.empty(K, dtype=np.int64)
    for i in range(n):
        # K smallest by insertion; strict < keeps the lower index on ties
        filled = 0
        for j in range(n):
            if j == i:
                continue
            d = D[i, j]
            if filled == K and not d < best_d[K - 1]:
                continue
            t = filled if filled < K else K - 1
            while t > 0 and d < best_d[t - 1]:
                best_d[t] = best_d[t - 1]
                best_j[t] = best_j[t - 1]
                t -= 1
            best_d[t] = d
            best_j[t] = j
            if filled < K:
                filled += 1
        for c in range(n_classes):
            votes[c] = 0.0
        for t in range(filled):
            votes[labels[best_j[t]]] += 1.0
        best = 0
        for c in range(1, n_classes):
            if votes[c] > votes[best]:
                best = c
        pred[i] = best
    return pred


def _knn_loo_np(D, labels, n_classes, K):
    D = D.copy()
    np.fill_diagonal(D, np.inf)
    nn = np.argsort(D, axis=1, kind="stable")[:, :K]
    votes = np.zeros((D.shape[0], n_classes))
    np.add.at(votes, (np.repeat(np.arange(D.shape[0]), K), labels[nn].ravel()), 1.0)
    return np.argmax(votes, axis=1)


def knn_loo_predict(D, labels, n_classes, K):
    """Leave-one-out majority vote of the K nearest rows of distance matrix ``D``.

    Distance ties resolve to the lower index; vote ties to the lower class.
    """
    D = np.ascontiguousarray(D, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if backend() == "numba":
        return _knn_loo_nb(D, labels, int(n_classes), int(K))
    return _knn_loo_np(D, labels, int(n_classes), int(K))


# ----------------------------------------------------------------------
# max-sensitivity running minimum
# ----------------------------------------------------------------------


@njit
def _running_min_mean_nb(S, lengths):
    n = S.shape[0]
    out = np.empty(n)
    for i in range(n):
        L = lengths[i]
        if L == 0:
            out[i] = np.nan
            continue
        cur = np.inf
        acc = 0.0
        for t in range(L):
            if S[i, t] < cur:
                cur = S[i, t]
            acc += cur
        out[i] = acc / L
    return out


def _running_min_mean_np(S, lengths):
    K = S.shape[1]
    valid = np.arange(K)[None, :] < lengths[:, None]
    run = np.minimum.accumulate(np.where(valid, S, np.inf), axis=1)
    acc = np.where(valid, run, 0.0)
    out = np.full(S.shape[0], np.nan)
    nz = lengths > 0
    # sequential sum keeps agreement with the loop kernel
    tot = np.zeros(S.shape[0])
    for t in range(K):
        tot = tot + acc[:, t]
    out[nz] = tot[nz] / lengths[nz]
    return out


def running_min_mean(S, lengths):
    """Row-wise mean over prefixes of the running minimum of ``S``.

    Only the first ``lengths[i]`` entries of row i are used; rows with
    length 0 yield NaN.
    """
    S = np.ascontiguousarray(S, dtype=np.float64)
    lengths = np.ascontiguousarray(lengths, dtype=np.int64)
    if backend() == "numba":
        return _running_min_mean_nb(S, lengths)
    return _running_min_mean_np(S, lengths)
