"""Weighted-F1 scoring over the 12 labels (no click plus 11 modes)."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .datamodel import CATALOG, N_CLASSES, NO_CLICK, ModeCatalog


def _labels(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.int64).ravel()
    if arr.size and (arr.min() < 0 or arr.max() >= N_CLASSES):
        raise ValueError(f"labels must lie in 0..{N_CLASSES - 1}")
    return arr


def confusion_matrix(truth, predicted) -> np.ndarray:
    """12 x 12 counts, rows = true label, columns = predicted label."""
    t, p = _labels(truth), _labels(predicted)
    if len(t) != len(p):
        raise ValueError(f"length mismatch: {len(t)} truths vs {len(p)} predictions")
    return np.bincount(t * N_CLASSES + p, minlength=N_CLASSES * N_CLASSES).reshape(N_CLASSES, N_CLASSES)


def _safe_div(num, den):
    return num / den if den else 0.0


def precision_recall_f1(confusion: np.ndarray, label: int) -> tuple[float, float, float]:
    """Per-class scores; any 0/0 is scored as 0."""
    tp = float(confusion[label, label])
    fp = float(confusion[:, label].sum()) - tp
    fn = float(confusion[label, :].sum()) - tp
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    f1 = _safe_div(2.0 * precision * recall, precision + recall)
    return precision, recall, f1


@dataclass
class EvalReport:
    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    weights: np.ndarray
    weighted_f1: float
    labels: tuple[int, ...] = tuple(range(N_CLASSES))

    @property
    def sample_ratio(self) -> np.ndarray:
        return self.weights

    def rows(self, catalog: ModeCatalog = CATALOG):
        for i, label in enumerate(self.labels):
            yield (catalog.label_name(label), float(self.weights[i]), float(self.f1[i]),
                   float(self.precision[i]), float(self.recall[i]))

    def write_csv(self, path, catalog: ModeCatalog = CATALOG) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["mode_name", "sample_ratio", "f1", "precision", "recall"])
            for name, ratio, f1, p, r in self.rows(catalog):
                w.writerow([name, repr(ratio), repr(f1), repr(p), repr(r)])
            w.writerow(["weighted_f1", repr(float(self.weighted_f1))])


def evaluate(truth, predicted, exclude_no_click: bool = False) -> EvalReport:
    """Full breakdown. With ``exclude_no_click`` the sessions whose true
    label is 0 are dropped and label 0 leaves the report."""
    t, p = _labels(truth), _labels(predicted)
    if len(t) != len(p):
        raise ValueError(f"length mismatch: {len(t)} truths vs {len(p)} predictions")
    if exclude_no_click:
        keep = t != NO_CLICK
        t, p = t[keep], p[keep]
    if len(t) == 0:
        raise ValueError("weighted F1 of an empty label vector")
    cm = confusion_matrix(t, p)
    labels = tuple(range(1 if exclude_no_click else 0, N_CLASSES))
    scores = np.array([precision_recall_f1(cm, k) for k in labels]).reshape(len(labels), 3)
    weights = cm.sum(axis=1)[list(labels)] / len(t)
    wf1 = float(np.sum(weights * scores[:, 2]))
    return EvalReport(cm, scores[:, 0], scores[:, 1], scores[:, 2], weights, wf1, labels)


def weighted_f1(truth, predicted, exclude_no_click: bool = False) -> float:
    """Sum over classes of (true share) x (class F1)."""
    return evaluate(truth, predicted, exclude_no_click).weighted_f1


def per_mode_report(truth, predicted, catalog: ModeCatalog = CATALOG,
                    path: Optional[str] = None, exclude_no_click: bool = False) -> EvalReport:
    report = evaluate(truth, predicted, exclude_no_click)
    if path is not None:
        report.write_csv(path, catalog)
    return report


def minority_mean_recall(truth, predicted, minority_labels) -> float:
    """Mean recall over ``minority_labels`` that occur in ``truth``."""
    report = evaluate(truth, predicted)
    t = _labels(truth)
    present = [k for k in minority_labels if np.any(t == k)]
    if not present:
        raise ValueError("none of the minority labels occur in the truth vector")
    return float(np.mean([report.recall[report.labels.index(k)] for k in present]))
