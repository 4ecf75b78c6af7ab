"""Test-time augmentation merging: sliding-window stitching and flip averaging."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_io import ProbMap


def default_stride(window: int) -> int:
    return max(1, (2 * window) // 3)


def axis_origins(dim: int, window: int, stride: int) -> list[int]:
    """Origins 0, s, 2s, ... with the last one clamped so the window ends at ``dim``."""
    if window > dim:
        raise ValueError(f"window {window} larger than image dimension {dim}")
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    last = dim - window
    origins = list(range(0, last, stride))
    origins.append(last)
    if any(b - a > window for a, b in zip(origins, origins[1:])):
        raise ValueError(f"stride {stride} exceeds window {window}: pixels between windows would be uncovered")
    return origins


@dataclass(frozen=True)
class WindowPlan:
    height: int
    width: int
    win_h: int
    win_w: int
    stride: int
    windows: tuple[tuple[int, int], ...]  # (x0, y0), row-major

    def coverage(self) -> np.ndarray:
        cover = np.zeros((self.height, self.width), dtype=np.int64)
        for x0, y0 in self.windows:
            cover[y0 : y0 + self.win_h, x0 : x0 + self.win_w] += 1
        return cover


def plan_windows(height: int, width: int, win_h: int, win_w: int, stride: int) -> WindowPlan:
    ys = axis_origins(height, win_h, stride)
    xs = axis_origins(width, win_w, stride)
    windows = tuple((x0, y0) for y0 in ys for x0 in xs)
    return WindowPlan(height, width, win_h, win_w, stride, windows)


def stitch(plan: WindowPlan, window_probs: list[ProbMap]) -> ProbMap:
    """Per-pixel mean over all windows covering that pixel."""
    if len(window_probs) != len(plan.windows):
        raise ValueError(f"plan has {len(plan.windows)} windows, got {len(window_probs)} maps")
    if not window_probs:
        raise ValueError("nothing to stitch")
    channels = window_probs[0].shape[0]
    acc = np.zeros((channels, plan.height, plan.width))
    cover = np.zeros((plan.height, plan.width))
    for (x0, y0), p in zip(plan.windows, window_probs):
        if p.shape != (channels, plan.win_h, plan.win_w):
            raise ValueError(f"window map has shape {p.shape}, expected {(channels, plan.win_h, plan.win_w)}")
        acc[:, y0 : y0 + plan.win_h, x0 : x0 + plan.win_w] += p.values
        cover[y0 : y0 + plan.win_h, x0 : x0 + plan.win_w] += 1
    out = acc / cover
    return ProbMap(out.astype(np.float32), normalized=all(p.normalized for p in window_probs))


def mirror(values: np.ndarray) -> np.ndarray:
    """Reverse the x axis of a C x H x W array."""
    return np.ascontiguousarray(values[..., ::-1])


def hflip_merge(p: ProbMap, p_flip: ProbMap) -> ProbMap:
    """Average ``p`` with the un-mirrored output of the mirrored input."""
    if p.shape != p_flip.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {p_flip.shape}")
    out = 0.5 * (p.values.astype(np.float64) + mirror(p_flip.values).astype(np.float64))
    return ProbMap(out.astype(np.float32), normalized=p.normalized and p_flip.normalized)
