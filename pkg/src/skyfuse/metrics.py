"""Confusion matrices and macro-averaged classification metrics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np

from .errors import InputError


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns are predicted classes."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise InputError(f"confusion matrix must be square, got shape {self.counts.shape}")
        if (self.counts < 0).any():
            raise InputError("confusion matrix counts must be non-negative")

    @classmethod
    def from_predictions(cls, y_true, y_pred, n_classes: int) -> "ConfusionMatrix":
        cm = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
        return cls(cm)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def format(self, class_names: Sequence[str]) -> str:
        width = max(max(len(c) for c in class_names), 5)
        head = " " * (width + 2) + " ".join(f"{c[:width]:>{width}}" for c in class_names)
        rows = [head]
        for name, row in zip(class_names, self.counts):
            rows.append(f"{name:>{width}}  " + " ".join(f"{v:>{width}d}" for v in row))
        return "\n".join(rows)


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def per_class(cm: ConfusionMatrix) -> Dict[str, np.ndarray]:
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    fn = c.sum(axis=1) - tp
    fp = c.sum(axis=0) - tp
    tn = c.sum() - tp - fn - fp
    recall = _safe_div(tp, tp + fn)
    precision = _safe_div(tp, tp + fp)
    return {
        "recall": recall,
        "precision": precision,
        "specificity": _safe_div(tn, tn + fp),
        "f1": _safe_div(2 * precision * recall, precision + recall),
    }


def macro_metrics(cm: ConfusionMatrix) -> Dict[str, float]:
    """Accuracy plus unweighted class means of recall, precision, F1 and specificity.

    A class whose denominator is zero contributes 0 to that metric.
    """
    if cm.counts.size == 0 or cm.total == 0:
        raise InputError("macro metrics need a non-empty confusion matrix")
    pc = per_class(cm)
    return {
        "accuracy": float(np.trace(cm.counts) / cm.total),
        "recall": float(pc["recall"].mean()),
        "precision": float(pc["precision"].mean()),
        "f1": float(pc["f1"].mean()),
        "specificity": float(pc["specificity"].mean()),
    }


METRIC_LABELS = (
    ("accuracy", "Test Accuracy"),
    ("recall", "Test Recall (Macro Avg)"),
    ("precision", "Test Precision (Macro Avg)"),
    ("f1", "Test F1 Score (Macro Avg)"),
    ("specificity", "Test Specificity (Macro Avg)"),
)


def format_metrics(m: Dict[str, float]) -> str:
    return "\n".join(f"{label:<30} {m[key]:.4f}" for key, label in METRIC_LABELS)
