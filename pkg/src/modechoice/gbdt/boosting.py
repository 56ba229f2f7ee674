"""Multiclass softmax gradient boosting.

Every round grows one tree per class on the softmax gradients of the
current logits, using a per-round row sample and a per-tree feature
sample. With a validation table, training stops once validation
weighted F1 has not improved for ``early_stopping_patience`` rounds, and
the ensemble is cut back to its best round.
"""
from __future__ import annotations

import ast
import hashlib
import logging
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from ..datamodel import N_CLASSES
from ..errors import SchemaError
from ..evaluation import weighted_f1
from ..features.table import FeatureTable, schema_hash
from .binning import MAX_BINS, apply_bins, bin_features, n_bins
from .tree import DecisionTree, grow_tree, single_leaf

logger = logging.getLogger(__name__)

FORMAT_VERSION = "modechoice-gbdt 1"
PRIOR_FLOOR = 1e-12


@dataclass
class GbdtConfig:
    num_leaves: int = 40
    max_depth: int = 8
    learning_rate: float = 0.1
    subsample: float = 0.8
    feature_fraction: float = 0.8
    min_child_samples: int = 60
    l2_lambda: float = 1.0
    max_bins: int = MAX_BINS
    max_rounds: int = 1000
    early_stopping_patience: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.num_leaves < 2:
            raise ValueError("num_leaves must be >= 2")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if not 0.0 < self.subsample <= 1.0 or not 0.0 < self.feature_fraction <= 1.0:
            raise ValueError("subsample and feature_fraction must lie in (0, 1]")
        if self.l2_lambda < 0 or self.max_depth < 1 or self.min_child_samples < 1:
            raise ValueError("l2_lambda >= 0, max_depth >= 1 and min_child_samples >= 1 required")
        if not 1 <= self.max_bins <= MAX_BINS:
            raise ValueError(f"max_bins must lie in 1..{MAX_BINS}")
        if self.max_rounds < 0 or self.early_stopping_patience < 1:
            raise ValueError("max_rounds >= 0 and early_stopping_patience >= 1 required")


@dataclass
class BoostedEnsemble:
    n_classes: int
    base_scores: np.ndarray
    trees: list  # rounds x classes
    bin_edges: list
    feature_names: list
    config: GbdtConfig
    training_log: list = field(default_factory=list)
    best_round: int = 0

    @property
    def n_rounds(self) -> int:
        return len(self.trees)

    @property
    def schema_hash(self) -> str:
        return schema_hash(self.feature_names)

    def importance(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-feature ``(split_count, total_gain)`` over all trees."""
        counts = np.zeros(len(self.feature_names), dtype=np.int64)
        gains = np.zeros(len(self.feature_names))
        for round_trees in self.trees:
            for t in round_trees:
                internal = t.left >= 0
                np.add.at(counts, t.feature[internal], 1)
                np.add.at(gains, t.feature[internal], t.gain[internal])
        return counts, gains


# --------------------------------------------------------------------------- objective


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_gradients(logits: np.ndarray, labels: np.ndarray):
    """Gradient ``p - y`` and diagonal Hessian ``p (1 - p)`` of softmax log-loss."""
    p = softmax(np.asarray(logits, dtype=float))
    y = np.zeros_like(p)
    y[np.arange(len(labels)), labels] = 1.0
    return p - y, p * (1.0 - p)


def log_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(lse - z[np.arange(len(labels)), labels]))


def class_prior_scores(labels: np.ndarray, n_classes: int = N_CLASSES) -> np.ndarray:
    counts = np.bincount(labels, minlength=n_classes).astype(float)
    prior = counts / max(counts.sum(), 1.0)
    return np.log(np.maximum(prior, PRIOR_FLOOR))


# --------------------------------------------------------------------------- training


def train(train_table: FeatureTable, valid_table: Optional[FeatureTable] = None,
          cfg: Optional[GbdtConfig] = None) -> BoostedEnsemble:
    cfg = cfg or GbdtConfig()
    if valid_table is not None and valid_table.column_names != train_table.column_names:
        raise SchemaError("train and validation tables have different columns")
    y = train_table.labels
    n, n_feat = train_table.rows.shape
    base = class_prior_scores(y)
    edges, binned = bin_features(train_table, cfg.max_bins)
    ens = BoostedEnsemble(N_CLASSES, base, [], edges, list(train_table.column_names), cfg)

    if len(np.unique(y)) < 2:
        logger.warning("training labels contain a single class; returning the prior model")
        return ens

    binned_t = np.ascontiguousarray(binned.T)
    nb_all = np.array([n_bins(e) for e in edges], dtype=np.int64)
    has_missing = np.isnan(train_table.rows).any(axis=0)
    splittable = np.flatnonzero((nb_all > 1) | has_missing)
    n_take_f = max(1, int(round(cfg.feature_fraction * len(splittable))))
    n_take_r = max(1, int(round(cfg.subsample * n)))
    rng = np.random.default_rng(cfg.seed)

    logits = np.tile(base, (n, 1))
    if valid_table is not None:
        vbinned = apply_bins(valid_table.rows, edges)
        vlogits = np.tile(base, (valid_table.n_rows, 1))
    best_f1, best_round, since_best = -np.inf, 0, 0

    for rnd in range(cfg.max_rounds):
        g, h = softmax_gradients(logits, y)
        rows = np.sort(rng.choice(n, n_take_r, replace=False)) if n_take_r < n else np.arange(n)
        round_trees = []
        for c in range(N_CLASSES):
            if n_take_f < len(splittable):
                feats = np.sort(rng.choice(splittable, n_take_f, replace=False))
            else:
                feats = splittable
            tree = grow_tree(
                g[:, c], h[:, c], binned_t, rows, feats, nb_all[feats], edges,
                num_leaves=cfg.num_leaves, max_depth=cfg.max_depth,
                min_child_samples=cfg.min_child_samples, l2_lambda=cfg.l2_lambda,
                learning_rate=cfg.learning_rate,
            )
            round_trees.append(tree)
        for c, tree in enumerate(round_trees):
            logits[:, c] += tree.predict_binned(binned)
        ens.trees.append(round_trees)
        entry = {"round": rnd + 1, "train_loss": log_loss(logits, y)}
        if valid_table is not None:
            for c, tree in enumerate(round_trees):
                vlogits[:, c] += tree.predict_binned(vbinned)
            f1 = weighted_f1(valid_table.labels, np.argmax(vlogits, axis=1))
            entry["valid_loss"] = log_loss(vlogits, valid_table.labels)
            entry["valid_weighted_f1"] = f1
            if f1 > best_f1:
                best_f1, best_round, since_best = f1, rnd + 1, 0
            else:
                since_best += 1
        ens.training_log.append(entry)
        logger.debug("round %d: %s", rnd + 1, entry)
        if valid_table is not None and since_best >= cfg.early_stopping_patience:
            logger.info("early stop at round %d, best round %d (weighted F1 %.4f)",
                        rnd + 1, best_round, best_f1)
            break

    if valid_table is not None and ens.trees:
        ens.trees = ens.trees[:best_round]
        ens.best_round = best_round
    else:
        ens.best_round = len(ens.trees)
    return ens


# --------------------------------------------------------------------------- prediction


def _check_schema(ens: BoostedEnsemble, table: FeatureTable):
    if table.column_names != ens.feature_names:
        missing = [c for c in ens.feature_names if c not in table.column_names]
        detail = f"missing column {missing[0]!r}" if missing else "column order differs"
        raise SchemaError(f"feature layout does not match the model: {detail}")


def predict_logits(ens: BoostedEnsemble, table: FeatureTable) -> np.ndarray:
    _check_schema(ens, table)
    logits = np.tile(ens.base_scores, (table.n_rows, 1))
    if ens.trees and table.n_rows:
        binned = apply_bins(table.rows, ens.bin_edges)
        for round_trees in ens.trees:
            for c, tree in enumerate(round_trees):
                logits[:, c] += tree.predict_binned(binned)
    return logits


def predict_proba(ens: BoostedEnsemble, table: FeatureTable) -> np.ndarray:
    return softmax(predict_logits(ens, table))


def predict_label(ens: BoostedEnsemble, table: FeatureTable) -> np.ndarray:
    return np.argmax(predict_proba(ens, table), axis=1)


def feature_importance(ens: BoostedEnsemble, top_k: Optional[int] = None):
    """``(name, split_count, total_gain)`` for features used in any split,
    by gain, then split count, then name."""
    counts, gains = ens.importance()
    rows = [(ens.feature_names[j], int(counts[j]), float(gains[j]))
            for j in np.flatnonzero(counts)]
    rows.sort(key=lambda r: (-r[2], -r[1], r[0]))
    return rows[:top_k] if top_k is not None else rows


# --------------------------------------------------------------------------- persistence

_TREE_FIELDS = ("feature", "threshold_bin", "threshold", "default_left", "left", "right",
                "value", "gain", "count", "depth")


def _f(x) -> str:
    return repr(float(x))


def dumps(ens: BoostedEnsemble) -> str:
    """Serialise to the versioned text format; floats round-trip exactly."""
    out = [FORMAT_VERSION]
    out.append(f"schema_hash={ens.schema_hash}")
    out.append(f"n_classes={ens.n_classes}")
    out.append(f"n_features={len(ens.feature_names)}")
    out.append(f"n_rounds={ens.n_rounds}")
    out.append(f"best_round={ens.best_round}")
    for f in fields(GbdtConfig):
        out.append(f"config.{f.name}={getattr(ens.config, f.name)!r}")
    out.append("base_scores=" + ",".join(_f(v) for v in ens.base_scores))
    out.append("[features]")
    for name, edges in zip(ens.feature_names, ens.bin_edges):
        out.append(name + "\t" + ",".join(_f(e) for e in edges))
    out.append("[log]")
    for entry in ens.training_log:
        out.append(",".join(f"{k}={v!r}" for k, v in entry.items()))
    for r, round_trees in enumerate(ens.trees):
        for c, t in enumerate(round_trees):
            out.append(f"[tree {r} {c} {t.n_nodes}]")
            for i in range(t.n_nodes):
                out.append(",".join((
                    str(int(t.feature[i])), str(int(t.threshold_bin[i])), _f(t.threshold[i]),
                    str(int(t.default_left[i])), str(int(t.left[i])), str(int(t.right[i])),
                    _f(t.value[i]), _f(t.gain[i]), str(int(t.count[i])), str(int(t.depth[i])),
                )))
    out.append("[end]")
    return "\n".join(out) + "\n"


def loads(text: str) -> BoostedEnsemble:
    lines = text.splitlines()
    if not lines or lines[0] != FORMAT_VERSION:
        raise SchemaError(f"not a model file (expected header {FORMAT_VERSION!r})")
    header, i = {}, 1
    while not lines[i].startswith("["):
        k, v = lines[i].split("=", 1)
        header[k] = v
        i += 1
    cfg_kwargs = {k[len("config."):]: ast.literal_eval(v) for k, v in header.items()
                  if k.startswith("config.")}
    cfg = GbdtConfig(**cfg_kwargs)
    base = np.array([float(v) for v in header["base_scores"].split(",")])
    assert lines[i] == "[features]"
    i += 1
    names, edges = [], []
    while not lines[i].startswith("["):
        name, e = lines[i].split("\t", 1)
        names.append(name)
        edges.append(np.array([float(v) for v in e.split(",")]) if e else np.empty(0))
        i += 1
    assert lines[i] == "[log]"
    i += 1
    log = []
    while not lines[i].startswith("["):
        entry = {}
        for part in lines[i].split(","):
            k, v = part.split("=", 1)
            entry[k] = ast.literal_eval(v)
        log.append(entry)
        i += 1
    n_classes = int(header["n_classes"])
    trees: list = []
    while lines[i] != "[end]":
        _, r, c, n_nodes = lines[i].strip("[]").split()
        r, c, n_nodes = int(r), int(c), int(n_nodes)
        cols = [ln.split(",") for ln in lines[i + 1:i + 1 + n_nodes]]
        i += 1 + n_nodes
        arr = list(zip(*cols))
        tree = DecisionTree(
            feature=np.array(arr[0], dtype=np.int32),
            threshold_bin=np.array(arr[1], dtype=np.int32),
            threshold=np.array(arr[2], dtype=float),
            default_left=np.array([v == "1" for v in arr[3]], dtype=bool),
            left=np.array(arr[4], dtype=np.int32),
            right=np.array(arr[5], dtype=np.int32),
            value=np.array(arr[6], dtype=float),
            gain=np.array(arr[7], dtype=float),
            count=np.array(arr[8], dtype=np.int64),
            depth=np.array(arr[9], dtype=np.int32),
        )
        if c == 0:
            trees.append([])
        trees[r].append(tree)
    ens = BoostedEnsemble(n_classes, base, trees, edges, names, cfg, log, int(header["best_round"]))
    if ens.schema_hash != header["schema_hash"]:
        raise SchemaError("model file schema hash does not match its feature list")
    return ens


def save_model(ens: BoostedEnsemble, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(ens))


def load_model(path) -> BoostedEnsemble:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def model_digest(ens: BoostedEnsemble) -> str:
    return hashlib.sha256(dumps(ens).encode("utf-8")).hexdigest()
