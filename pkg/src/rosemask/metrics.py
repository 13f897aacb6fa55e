"""Confusion matrices and the accuracy/recall/precision/F1 formulas.

The positive class is rosacea (label 1). Degenerate denominators yield
explicit None values, never a silent 0 or 1: precision is undefined when
no positive prediction exists, recall when no positive sample exists, and
F1 when either factor is undefined or both are zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ConfusionMatrix", "Metrics", "compute_metrics", "confusion"]


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    recall: float | None
    precision: float | None
    f1: float | None

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "recall": self.recall,
            "precision": self.precision,
            "f1": self.f1,
        }


def confusion(predictions: np.ndarray, labels: np.ndarray) -> ConfusionMatrix:
    """Count TP/TN/FP/FN for binary predictions against binary labels."""
    preds = np.asarray(predictions)
    labs = np.asarray(labels)
    if preds.shape != labs.shape or preds.ndim != 1:
        raise ValueError(f"predictions {preds.shape} and labels {labs.shape} must be equal-length vectors")
    for name, arr in (("predictions", preds), ("labels", labs)):
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} must contain only 0 and 1")
    return ConfusionMatrix(
        tp=int(np.count_nonzero((preds == 1) & (labs == 1))),
        tn=int(np.count_nonzero((preds == 0) & (labs == 0))),
        fp=int(np.count_nonzero((preds == 1) & (labs == 0))),
        fn=int(np.count_nonzero((preds == 0) & (labs == 1))),
    )


def compute_metrics(cm: ConfusionMatrix) -> Metrics:
    """Evaluate the four metrics exactly; undefined ratios become None."""
    if cm.total == 0:
        raise ValueError("cannot compute metrics for an empty confusion matrix")
    accuracy = (cm.tp + cm.tn) / cm.total
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn > 0 else None
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp > 0 else None
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return Metrics(accuracy=accuracy, recall=recall, precision=precision, f1=f1)
