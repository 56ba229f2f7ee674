"""Quantile histogram binning.

Each feature gets strictly increasing ``edges``; a value ``x`` falls in bin
``#{edges < x}``, so bins ``0..len(edges)`` hold observed values and bin
:data:`MISSING_BIN` is reserved for NaN. ``bin(x) <= t`` exactly when
``x <= edges[t]``.
"""
from __future__ import annotations

import numpy as np

MAX_BINS = 255
MISSING_BIN = 255


def compute_bin_edges(values: np.ndarray, max_bins: int = MAX_BINS) -> np.ndarray:
    """Edges placing about ``n / max_bins`` observed values in each bin.

    Cuts fall at midpoints between consecutive distinct values, so equal
    values always share a bin.
    """
    if not 1 <= max_bins <= MAX_BINS:
        raise ValueError(f"max_bins must lie in 1..{MAX_BINS}")
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    if len(v) == 0:
        return np.empty(0)
    distinct, counts = np.unique(v, return_counts=True)
    if len(distinct) == 1:
        return np.empty(0)
    if len(distinct) <= max_bins:
        return (distinct[:-1] + distinct[1:]) / 2.0
    cum = np.cumsum(counts)[:-1].astype(float)
    targets = np.arange(1, max_bins) * (len(v) / max_bins)
    pos = np.searchsorted(cum, targets)
    # nearest cumulative count to each target, ties to the lower cut
    lower = np.clip(pos - 1, 0, len(cum) - 1)
    upper = np.clip(pos, 0, len(cum) - 1)
    pick = np.where(np.abs(cum[lower] - targets) <= np.abs(cum[upper] - targets), lower, upper)
    pick = np.unique(pick)
    return (distinct[pick] + distinct[pick + 1]) / 2.0


def apply_bins(X: np.ndarray, bin_edges) -> np.ndarray:
    """Bin a raw matrix with precomputed edges; returns ``uint8`` of the same shape."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(bin_edges):
        raise ValueError("matrix width does not match the number of binned features")
    out = np.empty(X.shape, dtype=np.uint8)
    for j, edges in enumerate(bin_edges):
        col = X[:, j]
        b = np.searchsorted(edges, col, side="left")
        b[np.isnan(col)] = MISSING_BIN
        out[:, j] = b
    return out


def bin_features(table, max_bins: int = MAX_BINS):
    """Fit edges on ``table`` (a FeatureTable or raw matrix) and bin it.

    Returns ``(bin_edges, binned)``.
    """
    X = table.rows if hasattr(table, "rows") else np.asarray(table, dtype=float)
    if X.shape[0] == 0:
        raise ValueError("cannot bin an empty table")
    edges = [compute_bin_edges(X[:, j], max_bins) for j in range(X.shape[1])]
    return edges, apply_bins(X, edges)


def n_bins(edges) -> int:
    """Number of non-missing bins for one feature."""
    return len(edges) + 1
