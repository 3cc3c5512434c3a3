"""Confusion matrix and the macro/micro F1 scores.

Macro-F1 is the unweighted mean of per-class F1 over ALL classes, including
classes absent from the gold slice (their F1 counts as 0 unless never
predicted either, which is still 0 by the 0/0 -> 0 convention).  Micro-F1 for
single-label multiclass equals accuracy.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError


class ConfusionMatrix:
    """Gold x predicted counts; supports shard-and-merge accumulation."""

    def __init__(self, num_classes: int = 25):
        if num_classes < 1:
            raise InputError(f"num_classes must be >= 1, got {num_classes}")
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    @property
    def num_classes(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def _check(self, idx: int, what: str) -> int:
        idx = int(idx)
        if not 0 <= idx < self.num_classes:
            raise InputError(f"{what} index {idx} outside [0, {self.num_classes})")
        return idx

    def accumulate(self, gold: int, pred: int) -> "ConfusionMatrix":
        self.counts[self._check(gold, "gold"), self._check(pred, "predicted")] += 1
        return self

    def accumulate_many(self, gold, pred) -> "ConfusionMatrix":
        gold = np.asarray(gold)
        pred = np.asarray(pred)
        if gold.shape != pred.shape:
            raise InputError(f"gold shape {gold.shape} != predicted shape {pred.shape}")
        for arr, what in ((gold, "gold"), (pred, "predicted")):
            if arr.size and (int(arr.min()) < 0 or int(arr.max()) >= self.num_classes):
                raise InputError(f"{what} indices outside [0, {self.num_classes})")
        np.add.at(self.counts, (gold, pred), 1)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise InputError("cannot merge confusion matrices of different sizes")
        self.counts += other.counts
        return self


def _per_class(cm: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class (precision, recall, f1) with 0/0 -> 0 throughout."""
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    precision = np.divide(tp, tp + fp, out=np.zeros_like(tp), where=(tp + fp) > 0)
    recall = np.divide(tp, tp + fn, out=np.zeros_like(tp), where=(tp + fn) > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros_like(tp), where=pr > 0)
    return precision, recall, f1


def macro_f1(cm: ConfusionMatrix) -> float:
    if cm.total < 1:
        raise InputError("cannot score an empty confusion matrix")
    return float(_per_class(cm)[2].mean())


def micro_f1(cm: ConfusionMatrix) -> float:
    if cm.total < 1:
        raise InputError("cannot score an empty confusion matrix")
    return float(np.trace(cm.counts) / cm.total)


def report(cm: ConfusionMatrix, names: list[str] | None = None) -> dict:
    """Per-class precision/recall/F1/support plus the two aggregate scores."""
    precision, recall, f1 = _per_class(cm)
    support = cm.counts.sum(axis=1)
    if names is None:
        names = [f"class_{i}" for i in range(cm.num_classes)]
    per_class = [
        {
            "label": names[i],
            "precision": float(precision[i]),
            "recall": float(recall[i]),
            "f1": float(f1[i]),
            "support": int(support[i]),
        }
        for i in range(cm.num_classes)
    ]
    return {
        "per_class": per_class,
        "macro_f1": macro_f1(cm),
        "micro_f1": micro_f1(cm),
        "total": cm.total,
    }


def format_report(rep: dict) -> str:
    """Fixed-width text table of a report() dict."""
    width = max(len(row["label"]) for row in rep["per_class"])
    lines = [f"{'label':<{width}}  precision  recall      f1  support"]
    for row in rep["per_class"]:
        lines.append(
            f"{row['label']:<{width}}  {row['precision']:>9.4f}  {row['recall']:>6.4f}"
            f"  {row['f1']:>6.4f}  {row['support']:>7d}"
        )
    lines.append(f"macro_f1 {rep['macro_f1']:.4f}  micro_f1 {rep['micro_f1']:.4f}"
                 f"  total {rep['total']}")
    return "\n".join(lines)
