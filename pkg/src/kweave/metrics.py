"""Evaluation measures: accuracy, per-class rates, F1, MCC, and margin filtering."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ConfusionMatrix:
    """counts[i, j] = instances of true class i predicted as class j."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        c = self.counts.shape[0]
        if self.counts.ndim != 2 or self.counts.shape != (c, c):
            raise ValueError("confusion matrix must be square")
        if np.any(self.counts < 0):
            raise ValueError("negative counts")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class MetricsReport:
    accuracy: float
    mean_per_class_accuracy: float
    f1_per_class: np.ndarray
    mcc_per_class: np.ndarray
    macro_f1: float
    mean_mcc: float
    retained_fraction: float = 1.0
    confusion: ConfusionMatrix | None = field(default=None, repr=False)

    def to_dict(self, include_confusion: bool = False) -> dict:
        out = {
            "accuracy": self.accuracy,
            "mean_per_class_accuracy": self.mean_per_class_accuracy,
            "f1_per_class": [float(v) for v in self.f1_per_class],
            "mcc_per_class": [float(v) for v in self.mcc_per_class],
            "macro_f1": self.macro_f1,
            "mean_mcc": self.mean_mcc,
            "retained_fraction": self.retained_fraction,
        }
        if include_confusion and self.confusion is not None:
            out["confusion"] = [[int(v) for v in row] for row in self.confusion.counts]
        return out


def confusion_matrix(true_labels, predicted_labels, c: int) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1:
        raise ValueError("label vectors must be 1-d and equal length")
    if t.size == 0:
        raise ValueError("empty input")
    if t.min() < 0 or t.max() >= c or p.min() < 0 or p.max() >= c:
        raise ValueError("labels out of range")
    counts = np.bincount(t * c + p, minlength=c * c).reshape(c, c)
    return ConfusionMatrix(counts)


def _safe_div(num: float, den: float) -> float:
    return num / den if den != 0.0 else 0.0


def evaluate(true_labels, predicted_labels, c: int) -> MetricsReport:
    """Accuracy, mean per-class recall, per-class F1 and one-vs-rest MCC.

    0/0 cases (a class absent from truth or predictions) score 0 for both
    F1 and MCC rather than propagating NaN.
    """
    cm = confusion_matrix(true_labels, predicted_labels, c)
    counts = cm.counts.astype(np.float64)
    total = counts.sum()
    tp = np.diag(counts)
    row = counts.sum(axis=1)  # true-class supports
    col = counts.sum(axis=0)  # predicted-class counts

    recall = np.array([_safe_div(tp[k], row[k]) for k in range(c)])
    precision = np.array([_safe_div(tp[k], col[k]) for k in range(c)])
    f1 = np.array(
        [_safe_div(2.0 * precision[k] * recall[k], precision[k] + recall[k]) for k in range(c)]
    )

    mcc = np.empty(c)
    for k in range(c):
        TP = tp[k]
        FP = col[k] - TP
        FN = row[k] - TP
        TN = total - TP - FP - FN
        den = np.sqrt((TP + FP) * (TP + FN) * (TN + FP) * (TN + FN))
        mcc[k] = _safe_div(TP * TN - FP * FN, den)

    return MetricsReport(
        accuracy=float(tp.sum() / total),
        mean_per_class_accuracy=float(recall.mean()),
        f1_per_class=f1,
        mcc_per_class=mcc,
        macro_f1=float(f1.mean()),
        mean_mcc=float(mcc.mean()),
        confusion=cm,
    )


def margin_confidence(decision_matrix) -> np.ndarray:
    """Top decision value minus second-best, per instance."""
    D = np.asarray(decision_matrix, dtype=np.float64)
    if D.ndim != 2 or D.shape[1] < 2:
        raise ValueError("need decision values for at least two classes")
    part = np.partition(D, D.shape[1] - 2, axis=1)
    return part[:, -1] - part[:, -2]


def filter_unsure(confidences, predictions, true_labels, drop_fraction: float, c: int):
    """Drop the floor(rho * m) least-confident predictions, then score the rest.

    Ties in confidence drop the lower index first (stable sort order).
    Returns (retained indices ascending, MetricsReport on the retained set).
    """
    conf = np.asarray(confidences, dtype=np.float64)
    pred = np.asarray(predictions, dtype=np.int64)
    true = np.asarray(true_labels, dtype=np.int64)
    if not (conf.shape == pred.shape == true.shape) or conf.ndim != 1:
        raise ValueError("inputs must be 1-d and equal length")
    if conf.size == 0:
        raise ValueError("empty input")
    if not 0.0 <= drop_fraction < 1.0:
        raise ValueError("drop_fraction must be in [0, 1)")
    m = conf.size
    n_drop = int(np.floor(drop_fraction * m))
    order = np.argsort(conf, kind="stable")
    retained = np.sort(order[n_drop:])
    report = evaluate(true[retained], pred[retained], c)
    report.retained_fraction = 1.0 - n_drop / m
    return retained, report
