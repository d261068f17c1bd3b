"""Losses and classification metrics.

Implements binary cross-entropy, sparse categorical cross-entropy, MSE
against one-hot targets, and confusion-matrix based precision/recall/F1/
accuracy with macro averaging. All logs are natural; probabilities are
clamped to [EPS, 1-EPS] before taking logs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

EPS = 1e-12


@dataclass
class ConfusionMatrix:
    """C x C count matrix; rows are true classes, columns predicted."""

    counts: np.ndarray
    n: int

    def per_class_counts(self, c: int) -> tuple[int, int, int, int]:
        """Return (TP, FP, FN, TN) for class c."""
        tp = int(self.counts[c, c])
        fp = int(self.counts[:, c].sum()) - tp
        fn = int(self.counts[c, :].sum()) - tp
        tn = self.n - tp - fp - fn
        return tp, fp, fn, tn

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]


@dataclass
class ScoreReport:
    precision: list[float]
    recall: list[float]
    f1: list[float]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    accuracy: float
    averaging: str = "macro"
    # True if any per-class score hit the 0/0 := 0 convention
    degenerate_classes: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "accuracy": self.accuracy,
            "averaging": self.averaging,
            "degenerate_classes": self.degenerate_classes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass
class LossValue:
    value: float
    kind: str  # bce | cce | mse


def confusion(y_true, y_pred, num_classes: int) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError("y_true and y_pred must be 1-D and equal length")
    if y_true.size == 0:
        raise ValueError("empty label vectors")
    for name, v in (("y_true", y_true), ("y_pred", y_pred)):
        if v.min() < 0 or v.max() >= num_classes:
            raise ValueError(f"{name} contains labels outside [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    return ConfusionMatrix(counts=counts, n=int(y_true.size))


def _safe_div(num: float, den: float) -> float:
    # 0/0 := 0 convention for undefined precision/recall/F1
    return num / den if den > 0 else 0.0


def classification_report(cm: ConfusionMatrix) -> ScoreReport:
    if cm.n <= 0:
        raise ValueError("confusion matrix is empty")
    c = cm.num_classes
    prec, rec, f1 = [], [], []
    degenerate = []
    for k in range(c):
        tp, fp, fn, _ = cm.per_class_counts(k)
        p = _safe_div(tp, tp + fp)
        r = _safe_div(tp, tp + fn)
        f = _safe_div(2.0 * p * r, p + r)
        if (tp + fp == 0) or (tp + fn == 0):
            degenerate.append(k)
        prec.append(p)
        rec.append(r)
        f1.append(f)
    accuracy = float(np.trace(cm.counts)) / cm.n
    return ScoreReport(
        precision=prec,
        recall=rec,
        f1=f1,
        macro_precision=sum(prec) / c,
        macro_recall=sum(rec) / c,
        macro_f1=sum(f1) / c,
        accuracy=accuracy,
        degenerate_classes=degenerate,
    )


def _clamp(p: np.ndarray) -> np.ndarray:
    return np.clip(p, EPS, 1.0 - EPS)


def bce_loss(p, y) -> LossValue:
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 1:
        raise ValueError("p and y must be 1-D and equal length")
    pc = _clamp(p)
    val = -float(np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)))
    return LossValue(value=val, kind="bce")


def cce_loss(probs, y) -> LossValue:
    probs = np.asarray(probs, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] != y.shape[0]:
        raise ValueError("probs must be N x C with one label per row")
    picked = _clamp(probs[np.arange(len(y)), y])
    return LossValue(value=-float(np.mean(np.log(picked))), kind="cce")


def mse(probs, y) -> LossValue:
    probs = np.asarray(probs, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] != y.shape[0]:
        raise ValueError("probs must be N x C with one label per row")
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(y)), y] = 1.0
    val = float(np.mean(np.sum((probs - onehot) ** 2, axis=1)))
    return LossValue(value=val, kind="mse")
