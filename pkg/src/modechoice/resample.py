"""Minority-class oversampling of feature tables.

Every class present in the table is raised to at least
``ceil(target_ratio * majority_count)`` rows, either by duplicating rows
or by SMOTE interpolation between same-class nearest neighbours.
Original rows always come first and unchanged; synthetic rows follow,
grouped by class in ascending label order.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .features.table import FeatureTable

logger = logging.getLogger(__name__)

STRATEGIES = ("none", "random", "smote")
_PAIRWISE_CHUNK = 2048


@dataclass
class ResampleConfig:
    strategy: str = "smote"
    k_neighbors: int = 5
    target_ratio: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if not 0.0 < self.target_ratio <= 1.0:
            raise ValueError("target_ratio must lie in (0, 1]")


def target_counts(labels, target_ratio: float, classes: Optional[Sequence[int]] = None) -> dict[int, int]:
    """Number of extra rows each class needs; ``classes`` restricts the targets."""
    labels = np.asarray(labels)
    present, counts = np.unique(labels, return_counts=True)
    have = dict(zip(present.tolist(), counts.tolist()))
    if classes is None:
        classes = sorted(have)
    empty = [c for c in classes if have.get(c, 0) == 0]
    if empty:
        raise ValueError(f"cannot oversample classes without rows: {empty}")
    goal = math.ceil(target_ratio * max(have.values()))
    return {c: max(0, goal - have[c]) for c in sorted(classes)}


def _append(table: FeatureTable, new_rows, new_labels, new_ids) -> FeatureTable:
    if not len(new_labels):
        return table
    ids = list(table.session_ids) + list(new_ids) if table.session_ids else []
    return FeatureTable(list(table.column_names), np.vstack([table.rows, new_rows]),
                        np.concatenate([table.labels, new_labels]), ids, list(table.families))


def random_oversample(table: FeatureTable, cfg: ResampleConfig,
                      classes: Optional[Sequence[int]] = None) -> FeatureTable:
    """Duplicate minority rows drawn uniformly with replacement."""
    rng = np.random.default_rng(cfg.seed)
    needs = target_counts(table.labels, cfg.target_ratio, classes)
    rows, labels, ids = [], [], []
    for c, extra in needs.items():
        if extra == 0:
            continue
        members = np.flatnonzero(table.labels == c)
        pick = members[rng.integers(0, len(members), extra)]
        rows.append(table.rows[pick])
        labels.append(np.full(extra, c, dtype=np.int64))
        ids += [f"dup{j}:{table.session_ids[i]}" if table.session_ids else f"dup{j}"
                for j, i in enumerate(pick)]
    if not rows:
        return table
    return _append(table, np.vstack(rows), np.concatenate(labels), ids)


def masked_sq_distances(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances skipping, per pair, columns missing in either row."""
    mx, my = ~np.isnan(X), ~np.isnan(Y)
    x0, y0 = np.where(mx, X, 0.0), np.where(my, Y, 0.0)
    d = (x0 * x0) @ my.T.astype(float) + mx.astype(float) @ (y0 * y0).T - 2.0 * (x0 @ y0.T)
    return np.maximum(d, 0.0)


def nearest_same_class(X: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest other rows of ``X`` (ties by lower index)."""
    n = len(X)
    k = min(k, n - 1)
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, _PAIRWISE_CHUNK):
        stop = min(start + _PAIRWISE_CHUNK, n)
        d = masked_sq_distances(X[start:stop], X)
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        order = np.argsort(d, axis=1, kind="stable")
        out[start:stop] = order[:, :k]
    return out


def smote_samples(X: np.ndarray, n_new: int, k: int, rng, fixed_lambda: Optional[float] = None):
    """Draw ``n_new`` interpolated rows from class matrix ``X``.

    Returns ``(rows, seed_index, neighbour_index, lam)``. Columns missing
    in the seed or the neighbour copy the seed's value.
    """
    n = len(X)
    if n == 1:
        logger.warning("class has a single row; SMOTE falls back to duplication")
        lam = np.zeros(n_new)
        idx = np.zeros(n_new, dtype=np.int64)
        return np.repeat(X, n_new, axis=0), idx, idx, lam
    if n <= k:
        logger.debug("class has %d rows, using all %d neighbours", n, n - 1)
    nn = nearest_same_class(X, k)
    seeds = rng.integers(0, n, n_new)
    picks = nn[seeds, rng.integers(0, nn.shape[1], n_new)]
    lam = rng.random(n_new) if fixed_lambda is None else np.full(n_new, float(fixed_lambda))
    a, b = X[seeds], X[picks]
    out = a + lam[:, None] * (b - a)
    hole = np.isnan(a) | np.isnan(b)
    out[hole] = a[hole]
    return out, seeds, picks, lam


def smote_oversample(table: FeatureTable, cfg: ResampleConfig,
                     classes: Optional[Sequence[int]] = None,
                     fixed_lambda: Optional[float] = None) -> FeatureTable:
    """SMOTE: ``x_i + lam * (x_nn - x_i)`` with ``lam ~ U[0, 1]`` and
    ``x_nn`` one of the ``k`` nearest same-class rows.

    Binary columns are interpolated like continuous ones.
    """
    rng = np.random.default_rng(cfg.seed)
    needs = target_counts(table.labels, cfg.target_ratio, classes)
    rows, labels, ids = [], [], []
    for c, extra in needs.items():
        if extra == 0:
            continue
        members = np.flatnonzero(table.labels == c)
        new, seeds, _, _ = smote_samples(table.rows[members], extra, cfg.k_neighbors, rng, fixed_lambda)
        rows.append(new)
        labels.append(np.full(extra, c, dtype=np.int64))
        ids += [f"smote{j}:{table.session_ids[members[s]]}" if table.session_ids else f"smote{j}"
                for j, s in enumerate(seeds)]
    if not rows:
        return table
    return _append(table, np.vstack(rows), np.concatenate(labels), ids)


def resample(table: FeatureTable, cfg: ResampleConfig) -> FeatureTable:
    if cfg.strategy == "none":
        return table
    if cfg.strategy == "random":
        return random_oversample(table, cfg)
    return smote_oversample(table, cfg)
