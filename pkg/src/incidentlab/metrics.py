"""Regression error and short/long-term classification metrics.

Labels follow the duration rule: ``0`` (short-term) when ``d <= tau``,
``1`` (long-term) otherwise. The confusion matrix treats *short-term* as
the positive class, so recall equals short-term accuracy and specificity
equals long-term accuracy.

Ratios are computed exactly with ``fractions.Fraction`` and rounded once,
which makes ``2*P*R/(P+R)`` and ``2TP/(2TP+FP+FN)`` identical floats.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import InputError

SHORT, LONG = 0, 1


def rmse(y, yhat) -> float:
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise InputError(f"length mismatch: {y.shape} vs {yhat.shape}")
    if y.size == 0:
        raise InputError("rmse of empty vectors")
    return float(np.sqrt(np.mean((yhat - y) ** 2)))


def classify_duration(d: float, tau: float) -> int:
    return SHORT if d <= tau else LONG


def classify_durations(d, tau: float) -> np.ndarray:
    return np.where(np.asarray(d, dtype=float) <= tau, SHORT, LONG).astype(np.int64)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fn_: int
    fp: int
    tn: int

    @property
    def n(self) -> int:
        return self.tp + self.fn_ + self.fp + self.tn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fn": self.fn_, "fp": self.fp, "tn": self.tn}


def _as_binary(v, name) -> np.ndarray:
    a = np.asarray(v)
    if a.ndim != 1:
        raise InputError(f"{name} must be 1-D")
    if not np.isin(a, (0, 1)).all():
        raise InputError(f"{name} must contain only 0/1 labels")
    return a.astype(np.int64)


def confusion(y_class, yhat_class) -> ConfusionMatrix:
    """Tally with short-term (label 0) as the positive class."""
    y = _as_binary(y_class, "y_class")
    p = _as_binary(yhat_class, "yhat_class")
    if y.shape != p.shape:
        raise InputError("label vectors differ in length")
    tp = int(np.sum((y == SHORT) & (p == SHORT)))
    fn = int(np.sum((y == SHORT) & (p == LONG)))
    fp = int(np.sum((y == LONG) & (p == SHORT)))
    tn = int(np.sum((y == LONG) & (p == LONG)))
    return ConfusionMatrix(tp, fn, fp, tn)


def _ratio(num: int, den: int) -> Fraction:
    return Fraction(num, den) if den else Fraction(0)


def f1_from_pr(precision, recall):
    """Harmonic mean; exact for Fraction inputs, 0 when both are 0."""
    if precision + recall == 0:
        return 0 * precision
    return 2 * precision * recall / (precision + recall)


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    return float(_ratio(2 * tp, 2 * tp + fp + fn))


@dataclass(frozen=True)
class ClassificationReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    short_term_accuracy: float
    long_term_accuracy: float
    precision_undefined: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def report(cm: ConfusionMatrix) -> ClassificationReport:
    n = cm.n
    if n <= 0:
        raise InputError("empty confusion matrix")
    p = _ratio(cm.tp, cm.tp + cm.fp)
    r = _ratio(cm.tp, cm.tp + cm.fn_)
    f1 = f1_from_pr(p, r)
    assert f1 == _ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn_)
    return ClassificationReport(
        accuracy=float(Fraction(cm.tp + cm.tn, n)),
        precision=float(p),
        recall=float(r),
        f1=float(f1),
        short_term_accuracy=float(r),
        long_term_accuracy=float(_ratio(cm.tn, cm.tn + cm.fp)),
        precision_undefined=(cm.tp + cm.fp) == 0,
    )


@dataclass(frozen=True)
class ThresholdRow:
    tau: float
    report: ClassificationReport
    class_balance: float


@dataclass
class ThresholdReport:
    rows: list[ThresholdRow]

    HEADER = ("tau", "accuracy", "precision", "recall", "f1", "short_acc", "long_acc", "balance")

    def table(self) -> list[tuple]:
        return [
            (r.tau, r.report.accuracy, r.report.precision, r.report.recall, r.report.f1,
             r.report.short_term_accuracy, r.report.long_term_accuracy, r.class_balance)
            for r in self.rows
        ]

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.HEADER)
            for row in self.table():
                w.writerow([repr(float(v)) for v in row])


def threshold_sweep(durations, predicted_fn: Callable[[float], Sequence[int]], taus) -> ThresholdReport:
    """Evaluate ``predicted_fn(tau)`` (one 0/1 label per row) at every tau.

    ``class_balance`` is the fraction of rows that are truly short-term.
    """
    d = np.asarray(durations, dtype=float)
    taus = [float(t) for t in taus]
    if not taus:
        raise InputError("empty tau grid")
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise InputError("tau grid must be strictly increasing")
    rows = []
    for tau in taus:
        truth = classify_durations(d, tau)
        pred = np.asarray(predicted_fn(tau))
        rows.append(ThresholdRow(tau, report(confusion(truth, pred)), float(np.mean(truth == SHORT))))
    return ThresholdReport(rows)


def default_tau_grid() -> list[float]:
    return [float(t) for t in range(20, 56, 5)]
