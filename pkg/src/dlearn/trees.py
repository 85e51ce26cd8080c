"""Regression trees, bagged forests and gradient boosting for squared-error targets.

Trees are stored as flat arrays (``feature``, ``threshold``, ``left``,
``right``, ``value``); a node with ``feature == -1`` is a leaf. Rows with
``x[feature] <= threshold`` go left.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import InvalidInput


@njit(cache=True)
def _grow(codes, n_bins, y, rows, max_depth, min_leaf, mtry, seed):
    # codes: (n, d) bin index per value; a split at bin b sends codes <= b left.
    np.random.seed(seed)
    m = rows.shape[0]
    d = codes.shape[1]
    max_b = 1
    for f in range(d):
        if n_bins[f] > max_b:
            max_b = n_bins[f]
    cap = 2 * m + 1
    feat = np.full(cap, -1, dtype=np.int64)
    split = np.zeros(cap, dtype=np.int64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    val = np.zeros(cap)
    work = rows.copy()
    st_node = np.empty(cap, dtype=np.int64)
    st_lo = np.empty(cap, dtype=np.int64)
    st_hi = np.empty(cap, dtype=np.int64)
    st_dep = np.empty(cap, dtype=np.int64)
    st_node[0], st_lo[0], st_hi[0], st_dep[0] = 0, 0, m, 0
    top = 1
    n_nodes = 1
    feats = np.arange(d)
    hsum = np.zeros(max_b)
    hcnt = np.zeros(max_b, dtype=np.int64)
    cbuf = np.empty(m, dtype=np.int64)
    while top > 0:
        top -= 1
        node, lo, hi, depth = st_node[top], st_lo[top], st_hi[top], st_dep[top]
        cnt = hi - lo
        s = 0.0
        for i in range(lo, hi):
            s += y[work[i]]
        mean = s / cnt
        val[node] = mean
        if cnt < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth):
            continue
        ss = 0.0
        for i in range(lo, hi):
            ss += (y[work[i]] - mean) ** 2
        if ss <= 1e-14 * (mean * mean * cnt + 1e-300):
            continue
        best_gain = 0.0
        best_f = -1
        best_b = 0
        visited = 0
        for k in range(d):
            r = k + np.random.randint(d - k)
            tmp = feats[k]
            feats[k] = feats[r]
            feats[r] = tmp
            f = feats[k]
            bmin = n_bins[f]
            bmax = -1
            for i in range(lo, hi):
                c = codes[work[i], f]
                if c < bmin:
                    bmin = c
                if c > bmax:
                    bmax = c
            if bmin == bmax:
                continue
            visited += 1
            if bmax - bmin > 4 * cnt:
                # sparse node: sort its codes rather than sweep the whole bin range
                for i in range(cnt):
                    cbuf[i] = codes[work[lo + i], f]
                order = np.argsort(cbuf[:cnt])
                sl = 0.0
                for i in range(cnt - 1):
                    sl += y[work[lo + order[i]]]
                    nl = i + 1
                    if nl < min_leaf:
                        continue
                    if cnt - nl < min_leaf:
                        break
                    c0 = cbuf[order[i]]
                    if c0 == cbuf[order[i + 1]]:
                        continue
                    sr = s - sl
                    gain = sl * sl / nl + sr * sr / (cnt - nl) - s * s / cnt
                    if gain > best_gain:
                        best_gain = gain
                        best_f = f
                        best_b = c0
            else:
                for b in range(bmin, bmax + 1):
                    hsum[b] = 0.0
                    hcnt[b] = 0
                for i in range(lo, hi):
                    c = codes[work[i], f]
                    hsum[c] += y[work[i]]
                    hcnt[c] += 1
                sl = 0.0
                nl = 0
                for b in range(bmin, bmax):
                    if hcnt[b] == 0:
                        continue
                    sl += hsum[b]
                    nl += hcnt[b]
                    if nl < min_leaf:
                        continue
                    if cnt - nl < min_leaf:
                        break
                    sr = s - sl
                    gain = sl * sl / nl + sr * sr / (cnt - nl) - s * s / cnt
                    if gain > best_gain:
                        best_gain = gain
                        best_f = f
                        best_b = b
            if visited >= mtry:
                break
        if best_f < 0 or best_gain <= 1e-12 * ss:
            continue
        i = lo
        j = hi - 1
        while i <= j:
            if codes[work[i], best_f] <= best_b:
                i += 1
            else:
                tmp = work[i]
                work[i] = work[j]
                work[j] = tmp
                j -= 1
        feat[node] = best_f
        split[node] = best_b
        left[node] = n_nodes
        right[node] = n_nodes + 1
        st_node[top], st_lo[top], st_hi[top], st_dep[top] = n_nodes, lo, i, depth + 1
        top += 1
        st_node[top], st_lo[top], st_hi[top], st_dep[top] = n_nodes + 1, i, hi, depth + 1
        top += 1
        n_nodes += 2
    return feat[:n_nodes], split[:n_nodes], left[:n_nodes], right[:n_nodes], val[:n_nodes]


@dataclass(frozen=True)
class BinnedFeatures:
    """Per-feature bin codes plus the cut value between consecutive bins.

    Features with at most ``max_bins`` distinct values get one bin per value,
    so split search over bins is exact; otherwise bins are quantile-based.
    """

    codes: np.ndarray
    n_bins: np.ndarray
    cuts: np.ndarray  # cuts[f, b] separates bin b from bin b+1 (NaN-padded)

    @classmethod
    def from_array(cls, X, max_bins=256):
        X = np.asarray(X, dtype=float)
        n, d = X.shape
        codes = np.empty((n, d), dtype=np.int64)
        n_bins = np.empty(d, dtype=np.int64)
        cuts = np.full((d, max(1, min(max_bins, n) - 1)), np.nan)
        for f in range(d):
            col = X[:, f]
            u = np.unique(col)
            if len(u) > max_bins:
                q = np.unique(np.quantile(col, np.linspace(0, 1, max_bins + 1)[1:-1]))
                raw = np.searchsorted(q, col, side="left")
                _, c = np.unique(raw, return_inverse=True)
            else:
                c = np.searchsorted(u, col)
            nb = int(c.max()) + 1
            lo = np.full(nb, np.inf)
            hi = np.full(nb, -np.inf)
            np.minimum.at(lo, c, col)
            np.maximum.at(hi, c, col)
            mid = 0.5 * (hi[:-1] + lo[1:])
            cuts[f, : nb - 1] = np.where(mid < lo[1:], mid, hi[:-1])
            codes[:, f] = c
            n_bins[f] = nb
        return cls(codes, n_bins, cuts)


def _grow_binned(binned, y, rows, max_depth, min_leaf, mtry, seed):
    feat, split, left, right, val = _grow(binned.codes, binned.n_bins, y, rows, max_depth,
                                          max(int(min_leaf), 1), max(int(mtry), 1), int(seed))
    thr = np.where(feat >= 0, binned.cuts[np.maximum(feat, 0), split], 0.0)
    return RegressionTree(feat, thr, left, right, val)


@njit(cache=True)
def _apply(X, feat, thr, left, right):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feat[node] >= 0:
            if X[i, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(cache=True)
def _predict_many(X, feat, thr, left, right, val, offsets):
    n = X.shape[0]
    T = offsets.shape[0] - 1
    out = np.empty((T, n))
    for t in range(T):
        base = offsets[t]
        for i in range(n):
            node = base
            while feat[node] >= 0:
                if X[i, feat[node]] <= thr[node]:
                    node = base + left[node]
                else:
                    node = base + right[node]
            out[t, i] = val[node]
    return out


@dataclass(frozen=True)
class RegressionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X):
        """Leaf index reached by each row."""
        X = np.ascontiguousarray(X, dtype=float)
        return _apply(X, self.feature, self.threshold, self.left, self.right)

    def predict(self, X):
        return self.value[self.apply(X)]

    @property
    def n_leaves(self):
        return int(np.sum(self.feature < 0))


def grow_tree(X, y, rows=None, max_depth=None, min_leaf=1, mtry=None, seed=0,
              binned: BinnedFeatures | None = None) -> RegressionTree:
    """Greedy CART regression tree on ``rows`` of ``(X, y)`` (duplicates allowed).

    At each node up to ``mtry`` non-constant features, visited in random
    order, are searched for the split that most reduces the squared error.
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    if X.ndim != 2 or y.shape[0] != X.shape[0]:
        raise InvalidInput("tree inputs have inconsistent shapes")
    rows = np.arange(X.shape[0]) if rows is None else np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        raise InvalidInput("cannot grow a tree on zero rows")
    if binned is None:
        binned = BinnedFeatures.from_array(X)
    mtry = X.shape[1] if mtry is None else mtry
    depth = -1 if max_depth is None else int(max_depth)
    return _grow_binned(binned, y, rows, depth, min_leaf, mtry, seed)


def _pack(trees):
    sizes = [len(t.feature) for t in trees]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    cat = [np.concatenate([getattr(t, name) for t in trees]) if trees else np.zeros(0)
           for name in ("feature", "threshold", "left", "right", "value")]
    return (*cat, offsets)


def _child_rng(seed, i):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(i,))))


@dataclass(frozen=True)
class RandomForest:
    trees: tuple
    inbag: np.ndarray  # (n_trees, n_train) bootstrap counts
    min_leaf: int
    mtry: int

    def __post_init__(self):
        object.__setattr__(self, "_packed", _pack(self.trees))

    def tree_predictions(self, X):
        """Matrix of per-tree predictions, shape ``(n_trees, n)``."""
        X = np.ascontiguousarray(X, dtype=float)
        return _predict_many(X, *self._packed)

    def predict(self, X):
        return self.tree_predictions(X).mean(axis=0)

    def truncated(self, n_trees) -> "RandomForest":
        """The forest made of the first ``n_trees`` trees."""
        return RandomForest(self.trees[:n_trees], self.inbag[:n_trees], self.min_leaf, self.mtry)

    def oob_predictions(self, X_train):
        """Out-of-bag mean prediction per training row (NaN if never out of bag)."""
        P = self.tree_predictions(X_train)
        oob = self.inbag == 0
        total = np.sum(P * oob, axis=0)
        count = oob.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(count > 0, total / np.maximum(count, 1), np.nan)


def fit_forest(X, y, n_trees=300, min_leaf=5, max_depth=None, mtry=None, seed=0,
               bootstrap=True) -> RandomForest:
    """Bagged regression trees with per-node feature subsampling.

    Tree ``i`` draws from its own child stream of ``seed``, so the first
    ``t`` trees of a larger forest are exactly a ``t``-tree forest.
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    n, d = X.shape
    if mtry is None:
        mtry = int(np.ceil(d / 3))
    binned = BinnedFeatures.from_array(X)
    trees = []
    inbag = np.zeros((n_trees, n), dtype=np.int32)
    for i in range(n_trees):
        rng = _child_rng(seed, i)
        rows = rng.integers(0, n, n) if bootstrap else np.arange(n)
        np.add.at(inbag[i], rows, 1)
        trees.append(grow_tree(X, y, rows, max_depth, min_leaf, mtry, int(rng.integers(2**31 - 1)), binned))
    return RandomForest(tuple(trees), inbag, min_leaf, mtry)


@dataclass(frozen=True)
class GradientBoosting:
    base: float
    trees: tuple
    learning_rate: float

    def staged_predict(self, X):
        """Predictions after 0, 1, ..., n_rounds rounds; shape ``(n_rounds + 1, n)``."""
        X = np.ascontiguousarray(X, dtype=float)
        steps = np.zeros((1, X.shape[0]))
        if self.trees:
            steps = np.vstack([steps, self.learning_rate * _predict_many(X, *_pack(self.trees))])
        return self.base + np.cumsum(steps, axis=0)

    def predict(self, X):
        return self.staged_predict(X)[-1]


def fit_boosting(X, y, n_rounds=200, max_depth=3, learning_rate=0.1, subsample=0.8,
                 min_leaf=5, seed=0) -> GradientBoosting:
    """Stagewise squared-error boosting of depth-limited trees on row subsamples."""
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    base = float(np.mean(y))
    F = np.full(n, base)
    m = max(1, int(round(subsample * n)))
    binned = BinnedFeatures.from_array(X)
    trees = []
    for _ in range(n_rounds):
        rows = np.sort(rng.choice(n, m, replace=False)) if m < n else np.arange(n)
        t = grow_tree(X, y - F, rows, max_depth, min_leaf, None, int(rng.integers(2**31 - 1)), binned)
        F += learning_rate * t.predict(X)
        trees.append(t)
    return GradientBoosting(base, tuple(trees), learning_rate)
