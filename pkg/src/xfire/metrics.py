from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @classmethod
    def from_predictions(cls, pred, truth) -> "ConfusionCounts":
        pred = np.asarray(pred).astype(bool).reshape(-1)
        truth = np.asarray(truth).astype(bool).reshape(-1)
        if pred.shape != truth.shape:
            raise ValueError("predictions and labels differ in length")
        return cls(int(np.sum(pred & truth)), int(np.sum(pred & ~truth)),
                   int(np.sum(~pred & ~truth)), int(np.sum(~pred & truth)))

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


class PRF(NamedTuple):
    precision: float
    recall: float
    f1: float
    degenerate: bool


def prf1(counts: ConfusionCounts) -> PRF:
    """Precision, recall and F1; empty denominators give 0 and set ``degenerate``."""
    degenerate = False

    def ratio(num, den):
        nonlocal degenerate
        if den == 0:
            degenerate = True
            return 0.0
        return num / den

    p = ratio(counts.tp, counts.tp + counts.fp)
    r = ratio(counts.tp, counts.tp + counts.fn)
    f1 = ratio(2 * p * r, p + r)
    return PRF(p, r, f1, degenerate)


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc_auc(scores, labels) -> RocCurve:
    """ROC by sweeping every distinct score; tied scores move together."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).astype(bool).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tps = np.cumsum(y)[last_of_group]
    fps = (last_of_group + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    thresholds = np.r_[np.inf, s[last_of_group]]
    return RocCurve(fpr, tpr, thresholds, float(_trapezoid(tpr, fpr)))
