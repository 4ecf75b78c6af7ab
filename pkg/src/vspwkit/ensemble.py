"""Aggregating several models' outputs: weighted pair, soft average, majority vote."""
from __future__ import annotations

import numpy as np

from .tensor_io import IGNORE, ProbMap, SegMask


def _check_shapes(maps) -> None:
    shapes = {p.shape for p in maps}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch between inputs: {sorted(shapes)}")


def weighted_pair_values(p1: np.ndarray, p2: np.ndarray, tau: float) -> np.ndarray:
    """tau * p1 + (1 - tau) * p2 in float64."""
    return tau * np.asarray(p1, dtype=np.float64) + (1.0 - tau) * np.asarray(p2, dtype=np.float64)


def soft_average_values(maps) -> np.ndarray:
    """(1/N) * sum in float64, summed in input order."""
    acc = np.zeros(maps[0].shape, dtype=np.float64)
    for m in maps:
        acc += m
    return acc / len(maps)


def weighted_pair(p1: ProbMap, p2: ProbMap, tau: float) -> ProbMap:
    """Convex combination of two soft results; ``tau`` weighs ``p1``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"ensemble coefficient must lie in [0, 1], got {tau}")
    _check_shapes([p1, p2])
    out = weighted_pair_values(p1.values, p2.values, tau)
    return ProbMap(out.astype(np.float32), normalized=p1.normalized and p2.normalized)


def soft_average(models: list[ProbMap]) -> ProbMap:
    if not models:
        raise ValueError("soft_average needs at least one input")
    _check_shapes(models)
    out = soft_average_values([m.values for m in models])
    return ProbMap(out.astype(np.float32), normalized=all(m.normalized for m in models))


def vote(masks: list[SegMask]) -> SegMask:
    """Per-pixel majority over non-ignore votes; ties go to the smallest id."""
    if not masks:
        raise ValueError("vote needs at least one mask")
    shapes = {m.labels.shape for m in masks}
    if len(shapes) != 1:
        raise ValueError(f"dimension mismatch between masks: {sorted(shapes)}")
    stack = np.stack([m.labels for m in masks])
    classes = np.unique(stack[stack != IGNORE])
    if classes.size == 0:
        return SegMask(np.full(stack.shape[1:], IGNORE, dtype=np.uint8))
    # classes is sorted, so argmax's first-hit rule breaks ties toward the smallest id
    counts = np.stack([(stack == c).sum(axis=0) for c in classes])
    winner = classes[np.argmax(counts, axis=0)]
    winner[counts.max(axis=0) == 0] = IGNORE
    return SegMask(winner.astype(np.uint8))


def argmax_map(p: ProbMap) -> SegMask:
    """Decode to hard labels; ties go to the smallest class index."""
    if p.shape[0] > IGNORE:
        raise ValueError(f"{p.shape[0]} classes do not fit in an 8-bit mask")
    if p.shape[0] == 0:
        raise ValueError("cannot decode a tensor with zero classes")
    return SegMask(np.argmax(p.values, axis=0).astype(np.uint8))


def one_hot(mask: SegMask, num_classes: int) -> np.ndarray:
    """C x H x W indicator; ignore pixels map to the zero vector."""
    out = np.zeros((num_classes,) + mask.labels.shape)
    ys, xs = np.nonzero(mask.labels != IGNORE)
    out[mask.labels[ys, xs], ys, xs] = 1.0
    return out
