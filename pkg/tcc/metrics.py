# tcc/metrics.py
"""Accuracy, macro-F1 and per-class scores (scikit-learn wrappers)."""
from dataclasses import dataclass
from typing import Dict, Iterable

import numpy as np
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support

from tcc.errors import LossInputError


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    mf1: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    confusion: np.ndarray

    def as_row(self) -> Dict[str, float]:
        row = {"accuracy": self.accuracy, "mf1": self.mf1}
        for k, value in enumerate(self.f1):
            row[f"f1_{k}"] = float(value)
        return row


def evaluate_metrics(pred: Iterable[int], truth: Iterable[int], num_classes: int) -> Metrics:
    """Accuracy = trace / N; MF1 = unweighted mean of per-class F1 over all
    ``num_classes`` classes. A class never predicted nor present scores F1 = 0."""
    pred = np.asarray(list(pred), dtype=np.int64)
    truth = np.asarray(list(truth), dtype=np.int64)
    if pred.shape != truth.shape:
        raise LossInputError(f"length mismatch: {pred.shape[0]} predictions, {truth.shape[0]} labels")
    if pred.size == 0:
        raise LossInputError("cannot score an empty prediction vector")
    for name, values in (("prediction", pred), ("label", truth)):
        if values.min() < 0 or values.max() >= num_classes:
            raise LossInputError(f"{name} out of range for {num_classes} classes")

    labels = list(range(num_classes))
    confusion = confusion_matrix(truth, pred, labels=labels)
    precision, recall, f1, _ = precision_recall_fscore_support(
        truth, pred, labels=labels, average=None, zero_division=0
    )
    return Metrics(
        accuracy=float(np.trace(confusion) / confusion.sum()),
        mf1=float(np.mean(f1)),
        precision=np.asarray(precision, dtype=np.float64),
        recall=np.asarray(recall, dtype=np.float64),
        f1=np.asarray(f1, dtype=np.float64),
        confusion=confusion,
    )
