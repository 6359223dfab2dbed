"""Confusion-matrix accounting and classification metrics (positive class = 1)."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_predictions(cls, predictions, labels) -> "ConfusionMatrix":
        p = np.asarray(predictions, dtype=np.int64)
        y = np.asarray(labels, dtype=np.int64)
        if p.shape != y.shape:
            raise ValueError(f"{p.size} predictions for {y.size} labels")
        return cls(
            tp=int(np.sum((p == 1) & (y == 1))),
            tn=int(np.sum((p == 0) & (y == 0))),
            fp=int(np.sum((p == 1) & (y == 0))),
            fn=int(np.sum((p == 0) & (y == 1))),
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Metrics:
    """Fractions in [0, 1]; ``undefined`` names quotients whose denominator was zero."""

    accuracy: float
    recall: float
    precision: float
    f1: float
    undefined: tuple[str, ...] = ()

    def percent(self) -> dict[str, float]:
        """Percentages rounded to one decimal."""
        return {k: round(100.0 * getattr(self, k), 1) for k in ("accuracy", "recall", "precision", "f1")}

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "recall": self.recall,
            "precision": self.precision,
            "f1": self.f1,
            "undefined": list(self.undefined),
            "percent": self.percent(),
        }


def compute_metrics(matrix: ConfusionMatrix) -> Metrics:
    if matrix.total == 0:
        raise ValueError("cannot compute metrics of an empty confusion matrix")
    undefined = []

    def ratio(num: int, den: int, name: str) -> float:
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    accuracy = (matrix.tp + matrix.tn) / matrix.total
    recall = ratio(matrix.tp, matrix.tp + matrix.fn, "recall")
    precision = ratio(matrix.tp, matrix.tp + matrix.fp, "precision")
    if precision + recall == 0:
        undefined.append("f1")
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return Metrics(accuracy, recall, precision, f1, tuple(undefined))
