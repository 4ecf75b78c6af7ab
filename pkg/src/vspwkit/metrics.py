"""Confusion-matrix accumulation and mean IoU with exact rational results."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .tensor_io import IGNORE, SegMask


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """counts[g, p] = scored pixels with ground truth g predicted as p."""

    counts: np.ndarray

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionMatrix":
        if num_classes < 1:
            raise ValueError("need at least one class")
        return cls(np.zeros((num_classes, num_classes), dtype=np.uint64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return np.array_equal(self.counts, other.counts)


def accumulate(cm: ConfusionMatrix, pred: SegMask, gt: SegMask) -> ConfusionMatrix:
    if pred.labels.shape != gt.labels.shape:
        raise ValueError(f"prediction {pred.labels.shape} and ground truth {gt.labels.shape} differ in size")
    scored = gt.labels != IGNORE
    g = gt.labels[scored].astype(np.int64)
    p = pred.labels[scored].astype(np.int64)
    if np.any(p == IGNORE):
        raise ValueError("prediction contains ignore on scored pixel")
    n = cm.num_classes
    if g.size and (g.max() >= n or p.max() >= n):
        raise ValueError(f"class id out of range for {n} classes")
    tally = np.bincount(g * n + p, minlength=n * n).reshape(n, n).astype(np.uint64)
    return ConfusionMatrix(cm.counts + tally)


def merge(a: ConfusionMatrix, b: ConfusionMatrix) -> ConfusionMatrix:
    if a.num_classes != b.num_classes:
        raise ValueError(f"class count mismatch: {a.num_classes} vs {b.num_classes}")
    return ConfusionMatrix(a.counts + b.counts)


@dataclass(frozen=True)
class MiouResult:
    miou: Fraction
    per_class: list[tuple[int, Fraction | None]]  # None = absent

    @property
    def value(self) -> float:
        return self.miou.numerator / self.miou.denominator

    @property
    def present(self) -> list[int]:
        return [c for c, iou in self.per_class if iou is not None]


def miou(cm: ConfusionMatrix, all_classes: bool = False) -> MiouResult:
    """Mean IoU over classes with a non-zero union.

    ``all_classes`` divides by the full class count instead, scoring absent
    classes as zero.
    """
    counts = cm.counts.astype(object)
    tp = [int(counts[c, c]) for c in range(cm.num_classes)]
    gt_tot = [int(v) for v in counts.sum(axis=1)]
    pred_tot = [int(v) for v in counts.sum(axis=0)]
    per_class = []
    for c in range(cm.num_classes):
        union = gt_tot[c] + pred_tot[c] - tp[c]
        per_class.append((c, Fraction(tp[c], union) if union else None))
    scores = [iou for _, iou in per_class if iou is not None]
    if not scores:
        raise ValueError("no class present in ground truth or prediction")
    denom = cm.num_classes if all_classes else len(scores)
    return MiouResult(sum(scores, Fraction(0)) / denom, per_class)


def format_fraction(f: Fraction) -> str:
    return f"{f.numerator}/{f.denominator}"
