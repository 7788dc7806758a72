"""Classification metrics: per-class precision/recall/F plus macro and
support-weighted aggregates, all derived from one confusion matrix.

The 0-convention applies whenever a denominator is 0 (no predictions or no
records of a class), so every metric stays inside [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

__all__ = ["MetricsReport", "compute_metrics"]


@dataclass
class MetricsReport:
    confusion: np.ndarray  # [true, predicted] counts
    precision: list
    recall: list
    f_score: list
    support: list
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f: float
    weighted_precision: float
    weighted_recall: float
    weighted_f: float

    @property
    def n_records(self):
        return int(self.confusion.sum())

    def to_dict(self):
        return {
            "confusion": self.confusion.astype(int).tolist(),
            "per_class": {
                "precision": self.precision,
                "recall": self.recall,
                "f_score": self.f_score,
                "support": self.support,
            },
            "accuracy": self.accuracy,
            "macro": {
                "precision": self.macro_precision,
                "recall": self.macro_recall,
                "f_score": self.macro_f,
            },
            "weighted": {
                "precision": self.weighted_precision,
                "recall": self.weighted_recall,
                "f_score": self.weighted_f,
            },
            "n_records": self.n_records,
        }


def compute_metrics(y_true, y_pred, n_classes) -> MetricsReport:
    y_true = np.asarray(y_true, int)
    y_pred = np.asarray(y_pred, int)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ContractError(
            f"label arrays must be 1-D and equal length, got {y_true.shape} / {y_pred.shape}"
        )
    if y_true.size == 0:
        raise ContractError("cannot compute metrics over zero records")
    if y_true.min() < 0 or y_true.max() >= n_classes or y_pred.min() < 0 or y_pred.max() >= n_classes:
        raise ContractError(f"labels outside 0..{n_classes - 1}")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)

    diag = np.diag(confusion).astype(float)
    pred_totals = confusion.sum(axis=0).astype(float)
    true_totals = confusion.sum(axis=1).astype(float)
    precision = np.divide(diag, pred_totals, out=np.zeros(n_classes), where=pred_totals > 0)
    recall = np.divide(diag, true_totals, out=np.zeros(n_classes), where=true_totals > 0)
    pr = precision + recall
    f_score = np.divide(2 * precision * recall, pr, out=np.zeros(n_classes), where=pr > 0)
    weights = true_totals / true_totals.sum()
    return MetricsReport(
        confusion=confusion,
        precision=precision.tolist(),
        recall=recall.tolist(),
        f_score=f_score.tolist(),
        support=true_totals.astype(int).tolist(),
        accuracy=float(diag.sum() / confusion.sum()),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f=float(f_score.mean()),
        weighted_precision=float((weights * precision).sum()),
        weighted_recall=float((weights * recall).sum()),
        weighted_f=float((weights * f_score).sum()),
    )
