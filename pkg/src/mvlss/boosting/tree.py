"""Exact greedy second-order regression trees.

Trees are grown level by level over presorted feature columns. A split sends a
row left when ``x < threshold``; rows with a missing (NaN) value follow
``default_left``. Candidate thresholds sit halfway between consecutive
distinct values seen in a node.

Split gain for children ``(G_L, H_L)`` and ``(G_R, H_R)``::

    0.5 * (G_L^2/(H_L+lam) + G_R^2/(H_R+lam) - G^2/(H+lam)) - gamma

Only strictly positive gains with both children satisfying
``H >= min_child_weight`` are accepted. Features are scanned in increasing
index and thresholds in increasing order, and a candidate replaces the
incumbent only on a strictly larger gain, so ties resolve to the lowest
``(feature, threshold)`` pair. For a given threshold the missing-left routing
is tried first and kept unless missing-right is strictly better.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray  # int64, -1 for leaves
    threshold: np.ndarray
    default_left: np.ndarray  # bool
    left: np.ndarray  # int64, -1 for leaves
    right: np.ndarray
    weight: np.ndarray  # leaf values, 0 for internal nodes

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depths[self.left[i]] = depths[i] + 1
                depths[self.right[i]] = depths[i] + 1
        return int(depths.max())

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("features must be a 2-D array")
        return _predict(X, self.feature, self.threshold, self.default_left, self.left, self.right, self.weight)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(t) for t in self.threshold],
            "default_left": self.default_left.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "weight": [float(w) for w in self.weight],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            default_left=np.asarray(d["default_left"], dtype=np.bool_),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            weight=np.asarray(d["weight"], dtype=np.float64),
        )

    @classmethod
    def leaf(cls, value: float) -> "Tree":
        return cls(
            feature=np.array([-1], dtype=np.int64),
            threshold=np.zeros(1),
            default_left=np.ones(1, dtype=np.bool_),
            left=np.array([-1], dtype=np.int64),
            right=np.array([-1], dtype=np.int64),
            weight=np.array([float(value)]),
        )


def presort(X: np.ndarray):
    """Per-feature ascending row order (NaNs last) and count of non-missing rows."""
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    order = np.empty((p, n), dtype=np.int64)
    n_valid = np.empty(p, dtype=np.int64)
    for f in range(p):
        order[f] = np.argsort(X[:, f], kind="stable")
        n_valid[f] = int(np.sum(~np.isnan(X[:, f])))
    return order, n_valid


@numba.njit(cache=True)
def _score(g, h, lam):
    return g * g / (h + lam)


@numba.njit(cache=True)
def _midpoint(lo, hi):
    mid = lo + 0.5 * (hi - lo)
    if mid <= lo or mid > hi:
        mid = hi
    return mid


@numba.njit(cache=True, nogil=True)
def _grow(X, order, n_valid, g, h, row_in, cols, max_depth, lam, gamma, mcw):
    n = X.shape[0]
    max_nodes = 2 ** (max_depth + 1) - 1
    feature = np.full(max_nodes, -1, dtype=np.int64)
    threshold = np.zeros(max_nodes)
    default_left = np.ones(max_nodes, dtype=np.bool_)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    weight = np.zeros(max_nodes)

    pos = np.full(n, -1, dtype=np.int64)
    for r in range(n):
        if row_in[r]:
            pos[r] = 0
    lvl_start = 0
    lvl_end = 1
    n_nodes = 1
    depth = 0
    while lvl_end > lvl_start:
        m = lvl_end - lvl_start
        G = np.zeros(m)
        H = np.zeros(m)
        for r in range(n):
            nd = pos[r]
            if nd >= lvl_start:
                G[nd - lvl_start] += g[r]
                H[nd - lvl_start] += h[r]

        best_gain = np.zeros(m)
        best_feat = np.full(m, -1, dtype=np.int64)
        best_thr = np.zeros(m)
        best_dl = np.ones(m, dtype=np.bool_)

        if depth < max_depth:
            Gm = np.zeros(m)
            Hm = np.zeros(m)
            GL = np.zeros(m)
            HL = np.zeros(m)
            lastx = np.zeros(m)
            has_last = np.zeros(m, dtype=np.bool_)
            for ci in range(cols.size):
                f = cols[ci]
                Gm[:] = 0.0
                Hm[:] = 0.0
                GL[:] = 0.0
                HL[:] = 0.0
                has_last[:] = False
                for idx in range(n_valid[f], n):
                    r = order[f, idx]
                    nd = pos[r]
                    if nd >= lvl_start:
                        Gm[nd - lvl_start] += g[r]
                        Hm[nd - lvl_start] += h[r]
                for idx in range(n_valid[f]):
                    r = order[f, idx]
                    nd = pos[r]
                    if nd < lvl_start:
                        continue
                    j = nd - lvl_start
                    x = X[r, f]
                    if has_last[j] and x > lastx[j]:
                        parent = _score(G[j], H[j], lam)
                        gr = G[j] - Gm[j] - GL[j]
                        hr = H[j] - Hm[j] - HL[j]
                        # missing values routed left
                        gl_a = GL[j] + Gm[j]
                        hl_a = HL[j] + Hm[j]
                        if hl_a >= mcw and hr >= mcw:
                            gain = 0.5 * (_score(gl_a, hl_a, lam) + _score(gr, hr, lam) - parent) - gamma
                            if gain > best_gain[j]:
                                best_gain[j] = gain
                                best_feat[j] = f
                                best_thr[j] = _midpoint(lastx[j], x)
                                best_dl[j] = True
                        # missing values routed right
                        hr_b = hr + Hm[j]
                        if Hm[j] > 0.0 and HL[j] >= mcw and hr_b >= mcw:
                            gain = 0.5 * (_score(GL[j], HL[j], lam) + _score(gr + Gm[j], hr_b, lam) - parent) - gamma
                            if gain > best_gain[j]:
                                best_gain[j] = gain
                                best_feat[j] = f
                                best_thr[j] = _midpoint(lastx[j], x)
                                best_dl[j] = False
                    GL[j] += g[r]
                    HL[j] += h[r]
                    lastx[j] = x
                    has_last[j] = True

        next_start = n_nodes
        for j in range(m):
            nd = lvl_start + j
            if best_feat[j] >= 0:
                feature[nd] = best_feat[j]
                threshold[nd] = best_thr[j]
                default_left[nd] = best_dl[j]
                left[nd] = n_nodes
                right[nd] = n_nodes + 1
                n_nodes += 2
            else:
                weight[nd] = -G[j] / (H[j] + lam)
        for r in range(n):
            nd = pos[r]
            if nd < lvl_start:
                continue
            f = feature[nd]
            if f < 0:
                pos[r] = -1
                continue
            x = X[r, f]
            if np.isnan(x):
                go_left = default_left[nd]
            else:
                go_left = x < threshold[nd]
            pos[r] = left[nd] if go_left else right[nd]
        lvl_start = next_start
        lvl_end = n_nodes
        depth += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        default_left[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        weight[:n_nodes].copy(),
    )


@numba.njit(cache=True, nogil=True)
def _predict(X, feature, threshold, default_left, left, right, weight):
    n = X.shape[0]
    out = np.empty(n)
    for r in range(n):
        nd = 0
        while feature[nd] >= 0:
            x = X[r, feature[nd]]
            if np.isnan(x):
                nd = left[nd] if default_left[nd] else right[nd]
            elif x < threshold[nd]:
                nd = left[nd]
            else:
                nd = right[nd]
        out[r] = weight[nd]
    return out


def grow_tree(
    features,
    g,
    h,
    *,
    max_depth: int,
    lambda_l2: float = 1.0,
    gamma: float = 0.0,
    min_child_weight: float = 0.0,
    row_mask=None,
    col_mask=None,
    presorted=None,
) -> Tree:
    """Fit one regression tree to gradient/Hessian pairs.

    Parameters
    ----------
    features : ndarray, shape (N, P)
        May contain NaN for missing values.
    g, h : ndarray, shape (N,)
        Gradients and (positive) Hessians.
    row_mask, col_mask : bool arrays, optional
        Rows and columns the tree may use. Defaults to all.
    presorted : tuple, optional
        Output of :func:`presort` for ``features``, reused across trees.
    """
    X = np.ascontiguousarray(features, dtype=np.float64)
    n, p = X.shape
    g = np.ascontiguousarray(g, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    row_in = np.ones(n, dtype=np.bool_) if row_mask is None else np.asarray(row_mask, dtype=np.bool_)
    cols = np.arange(p, dtype=np.int64) if col_mask is None else np.flatnonzero(col_mask).astype(np.int64)
    if not row_in.any():
        raise ValueError("row mask selects no rows")
    if p == 0 or cols.size == 0:
        return Tree.leaf(-g[row_in].sum() / (h[row_in].sum() + lambda_l2))
    order, n_valid = presort(X) if presorted is None else presorted
    arrays = _grow(
        X, order, n_valid, g, h, row_in, cols,
        int(max_depth), float(lambda_l2), float(gamma), float(min_child_weight),
    )
    return Tree(*arrays)
