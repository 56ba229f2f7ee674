"""Leaf-wise regression trees on binned features.

A tree fits one Newton step of the boosting objective: split gain is

    G_L^2 / (H_L + lambda) + G_R^2 / (H_R + lambda) - G^2 / (H + lambda)

and a leaf outputs ``-G / (H + lambda) * learning_rate``. The leaf with the
largest gain is split first until ``num_leaves`` is reached.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numba
import numpy as np
from numba import njit, prange

if "NUMBA_THREADING_LAYER" not in os.environ:
    # the bundled TBB is too old; per-feature histogram slots keep any layer deterministic
    numba.config.THREADING_LAYER = "workqueue"

from .binning import MISSING_BIN

N_HIST_BINS = 256


@njit(parallel=True, cache=True)
def _build_histograms(binned_t, rows, g, h, features):
    """Per selected feature and bin: sums of g, h and row counts."""
    hist = np.zeros((features.shape[0], N_HIST_BINS, 3))
    for fi in prange(features.shape[0]):
        col = binned_t[features[fi]]
        for r in rows:
            b = col[r]
            hist[fi, b, 0] += g[r]
            hist[fi, b, 1] += h[r]
            hist[fi, b, 2] += 1.0
    return hist


@njit(cache=True)
def _best_split(hist, feature_bins, sum_g, sum_h, count, lam, min_child):
    """Scan features in order, then bins, then default direction (left first).

    Only strictly larger gains replace the incumbent, which fixes the
    tie-break order. Returns (gain, feature slot, bin, default_left).
    """
    best_gain = 0.0
    best_f = -1
    best_b = -1
    best_left = True
    parent = sum_g * sum_g / (sum_h + lam)
    for fi in range(hist.shape[0]):
        nb = feature_bins[fi]
        mg = hist[fi, MISSING_BIN, 0]
        mh = hist[fi, MISSING_BIN, 1]
        mc = hist[fi, MISSING_BIN, 2]
        gl = 0.0
        hl = 0.0
        cl = 0.0
        for b in range(nb):
            gl += hist[fi, b, 0]
            hl += hist[fi, b, 1]
            cl += hist[fi, b, 2]
            for d in range(2):
                default_left = d == 0
                if b == nb - 1 and (default_left or mc == 0.0):
                    continue
                if default_left:
                    lg, lh, lc = gl + mg, hl + mh, cl + mc
                else:
                    lg, lh, lc = gl, hl, cl
                rc = count - lc
                if lc < min_child or rc < min_child:
                    continue
                rg = sum_g - lg
                rh = sum_h - lh
                gain = lg * lg / (lh + lam) + rg * rg / (rh + lam) - parent
                if gain > best_gain:
                    best_gain = gain
                    best_f = fi
                    best_b = b
                    best_left = default_left
    return best_gain, best_f, best_b, best_left


@njit(cache=True)
def _predict_binned(binned, feature, threshold_bin, default_left, left, right, value):
    n = binned.shape[0]
    out = np.empty(n)
    for i in range(n):
        node = 0
        while left[node] >= 0:
            b = binned[i, feature[node]]
            if b == MISSING_BIN:
                go_left = default_left[node]
            else:
                go_left = b <= threshold_bin[node]
            node = left[node] if go_left else right[node]
        out[i] = value[node]
    return out


@njit(cache=True)
def _leaf_index_binned(binned, feature, threshold_bin, default_left, left, right):
    n = binned.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while left[node] >= 0:
            b = binned[i, feature[node]]
            if b == MISSING_BIN:
                go_left = default_left[node]
            else:
                go_left = b <= threshold_bin[node]
            node = left[node] if go_left else right[node]
        out[i] = node
    return out


@dataclass
class DecisionTree:
    """Flat node table; node 0 is the root, leaves have ``left == -1``."""

    feature: np.ndarray
    threshold_bin: np.ndarray
    threshold: np.ndarray
    default_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    count: np.ndarray
    depth: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.left < 0))

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())

    def is_leaf(self, node: int) -> bool:
        return self.left[node] < 0

    def predict_binned(self, binned: np.ndarray) -> np.ndarray:
        return _predict_binned(np.ascontiguousarray(binned), self.feature, self.threshold_bin,
                               self.default_left, self.left, self.right, self.value)

    def apply_binned(self, binned: np.ndarray) -> np.ndarray:
        """Leaf node id reached by each row."""
        return _leaf_index_binned(np.ascontiguousarray(binned), self.feature, self.threshold_bin,
                                  self.default_left, self.left, self.right)

    def predict_raw(self, X: np.ndarray) -> np.ndarray:
        """Route raw feature values using real-valued thresholds."""
        X = np.asarray(X, dtype=float)
        out = np.empty(len(X))
        for i, x in enumerate(X):
            node = 0
            while self.left[node] >= 0:
                v = x[self.feature[node]]
                go_left = self.default_left[node] if np.isnan(v) else v <= self.threshold[node]
                node = self.left[node] if go_left else self.right[node]
            out[i] = self.value[node]
        return out


def single_leaf(value: float = 0.0, count: int = 0) -> DecisionTree:
    return DecisionTree(
        feature=np.array([-1], dtype=np.int32),
        threshold_bin=np.array([-1], dtype=np.int32),
        threshold=np.array([np.nan]),
        default_left=np.array([True]),
        left=np.array([-1], dtype=np.int32),
        right=np.array([-1], dtype=np.int32),
        value=np.array([value]),
        gain=np.array([0.0]),
        count=np.array([count], dtype=np.int64),
        depth=np.array([0], dtype=np.int32),
    )


class _Leaf:
    __slots__ = ("node", "rows", "hist", "sum_g", "sum_h", "depth", "split")

    def __init__(self, node, rows, hist, sum_g, sum_h, depth):
        self.node = node
        self.rows = rows
        self.hist = hist
        self.sum_g = sum_g
        self.sum_h = sum_h
        self.depth = depth
        self.split = None


def grow_tree(g, h, binned_t, rows, features, feature_bins, bin_edges, *, num_leaves=40,
              max_depth=8, min_child_samples=60, l2_lambda=1.0, learning_rate=0.1) -> DecisionTree:
    """Grow one tree best-first.

    ``binned_t`` is the feature-major binned matrix (features x rows),
    ``rows`` the sampled row ids, ``features`` the sampled feature ids in
    ascending order and ``feature_bins`` their non-missing bin counts.
    """
    g = np.ascontiguousarray(g, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.int64)
    features = np.asarray(features, dtype=np.int64)
    feature_bins = np.asarray(feature_bins, dtype=np.int64)
    lam = float(l2_lambda)

    nodes = {k: [] for k in ("feature", "threshold_bin", "threshold", "default_left", "left",
                             "right", "value", "gain", "count", "depth")}

    def new_node(depth, rows_, sg, sh):
        for k, v in (("feature", -1), ("threshold_bin", -1), ("threshold", np.nan),
                     ("default_left", True), ("left", -1), ("right", -1),
                     ("value", -sg / (sh + lam) * learning_rate), ("gain", 0.0),
                     ("count", len(rows_)), ("depth", depth)):
            nodes[k].append(v)
        return len(nodes["feature"]) - 1

    def consider(leaf):
        if leaf.depth >= max_depth or len(leaf.rows) < 2 * min_child_samples or len(features) == 0:
            return
        gain, fi, b, dl = _best_split(leaf.hist, feature_bins, leaf.sum_g, leaf.sum_h,
                                      float(len(leaf.rows)), lam, float(min_child_samples))
        if fi >= 0 and gain > 0.0:
            leaf.split = (gain, fi, b, dl)

    sg, sh = float(np.sum(g[rows])), float(np.sum(h[rows]))
    root = _Leaf(new_node(0, rows, sg, sh), rows, None, sg, sh, 0)
    if len(features):
        root.hist = _build_histograms(binned_t, rows, g, h, features)
    consider(root)
    leaves = [root]

    while len(leaves) < num_leaves:
        cands = [lf for lf in leaves if lf.split is not None]
        if not cands:
            break
        best = cands[0]
        for lf in cands[1:]:
            if lf.split[0] > best.split[0]:
                best = lf
        _, fi, b, dl = best.split
        f = int(features[fi])
        col = binned_t[f, best.rows]
        go_left = np.where(col == MISSING_BIN, dl, col <= b)
        lrows, rrows = best.rows[go_left], best.rows[~go_left]
        lg, lh = float(np.sum(g[lrows])), float(np.sum(h[lrows]))
        rg, rh = float(np.sum(g[rrows])), float(np.sum(h[rrows]))
        # stored gain comes from the routed rows' own sums
        gain = lg * lg / (lh + lam) + rg * rg / (rh + lam) - (lg + rg) ** 2 / (lh + rh + lam)

        n = best.node
        edges = bin_edges[f]
        nodes["feature"][n] = f
        nodes["threshold_bin"][n] = b
        nodes["threshold"][n] = float(edges[b]) if b < len(edges) else np.inf
        nodes["default_left"][n] = bool(dl)
        nodes["gain"][n] = gain
        depth = best.depth + 1
        lchild = _Leaf(new_node(depth, lrows, lg, lh), lrows, None, lg, lh, depth)
        rchild = _Leaf(new_node(depth, rrows, rg, rh), rrows, None, rg, rh, depth)
        nodes["left"][n] = lchild.node
        nodes["right"][n] = rchild.node

        small, large = (lchild, rchild) if len(lrows) <= len(rrows) else (rchild, lchild)
        small.hist = _build_histograms(binned_t, small.rows, g, h, features)
        large.hist = best.hist - small.hist
        best.hist = None
        leaves.remove(best)
        for child in (lchild, rchild):
            consider(child)
            leaves.append(child)
        for child in (lchild, rchild):
            if child.split is None:
                child.hist = None

    return DecisionTree(
        feature=np.array(nodes["feature"], dtype=np.int32),
        threshold_bin=np.array(nodes["threshold_bin"], dtype=np.int32),
        threshold=np.array(nodes["threshold"], dtype=float),
        default_left=np.array(nodes["default_left"], dtype=bool),
        left=np.array(nodes["left"], dtype=np.int32),
        right=np.array(nodes["right"], dtype=np.int32),
        value=np.array(nodes["value"], dtype=float),
        gain=np.array(nodes["gain"], dtype=float),
        count=np.array(nodes["count"], dtype=np.int64),
        depth=np.array(nodes["depth"], dtype=np.int32),
    )
