"""Contrastive (NCE), Dice and cross-entropy losses with analytic gradients.

All losses return ``(value, gradient)`` computed in float64. Probability inputs
may be a :class:`ProbMap` or any C x H x W array; masks may be a
:class:`SegMask` or an H x W integer array.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .tensor_io import IGNORE, ProbMap, SegMask

CE_CLAMP = 1e-12
DICE_SMOOTH = 1.0


@dataclass(frozen=True)
class FeatureClip:
    """Patch embeddings pooled from consecutive frames.

    ``frame_index`` is informational: positives are any same-class patch in the
    clip, whichever frame it comes from.
    """

    features: np.ndarray
    patch_class: np.ndarray
    frame_index: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        cls = np.asarray(self.patch_class, dtype=np.int64)
        if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 1:
            raise ValueError(f"features must be M x D with M >= 2, D >= 1, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain non-finite values")
        if cls.shape != (x.shape[0],):
            raise ValueError(f"patch_class must have length {x.shape[0]}, got shape {cls.shape}")
        if cls.size and (cls.min() < 0 or cls.max() > IGNORE):
            raise ValueError("patch classes must lie in 0..255")
        frames = self.frame_index
        if frames is None:
            frames = np.zeros(x.shape[0], dtype=np.int64)
        frames = np.asarray(frames, dtype=np.int64)
        if frames.shape != cls.shape:
            raise ValueError("frame_index must match patch_class length")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "patch_class", cls)
        object.__setattr__(self, "frame_index", frames)

    @property
    def num_patches(self) -> int:
        return self.features.shape[0]

    def with_features(self, features) -> "FeatureClip":
        return FeatureClip(features, self.patch_class, self.frame_index)


@dataclass(frozen=True)
class NceConfig:
    temperature: float = 0.1
    num_negatives: int = 64
    positive_cap: int = 8
    seed: int = 0
    normalize_features: bool = False
    divide_by: str = "contributing"  # or "all"

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if self.num_negatives < 0:
            raise ValueError("num_negatives must be >= 0")
        if self.positive_cap < 1:
            raise ValueError("positive_cap must be >= 1")
        if self.divide_by not in ("contributing", "all"):
            raise ValueError(f"divide_by must be 'contributing' or 'all', got {self.divide_by!r}")


@dataclass(frozen=True)
class LossWeights:
    """Weights of total = l1 * (l3 * dice + l4 * ce) + l2 * nce."""

    lambda1: float = 1.0
    lambda2: float = 0.1
    lambda3: float = 5.0
    lambda4: float = 1.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class Anchor:
    index: int
    positives: np.ndarray
    negatives: np.ndarray


@dataclass(frozen=True)
class PairPlan:
    num_patches: int
    anchors: list[Anchor] = field(default_factory=list)
    skipped: list[int] = field(default_factory=list)

    @property
    def num_contributing(self) -> int:
        return len(self.anchors)

    @cached_property
    def rows(self) -> "_PairRows":
        """One row per (anchor, positive) pair, negatives padded to a common width."""
        n_rows = sum(len(a.positives) for a in self.anchors)
        width = max((len(a.negatives) for a in self.anchors), default=0)
        anchor = np.empty(n_rows, dtype=np.int64)
        positive = np.empty(n_rows, dtype=np.int64)
        weight = np.empty(n_rows)
        negatives = np.zeros((n_rows, width), dtype=np.int64)
        neg_valid = np.zeros((n_rows, width), dtype=bool)
        r = 0
        for a in self.anchors:
            k, n = len(a.positives), len(a.negatives)
            anchor[r : r + k] = a.index
            positive[r : r + k] = a.positives
            weight[r : r + k] = 1.0 / k
            negatives[r : r + k, :n] = a.negatives
            neg_valid[r : r + k, :n] = True
            r += k
        return _PairRows(anchor, positive, weight, negatives, neg_valid)


@dataclass(frozen=True)
class _PairRows:
    anchor: np.ndarray
    positive: np.ndarray
    weight: np.ndarray
    negatives: np.ndarray
    neg_valid: np.ndarray


def _subsample(rng: np.random.Generator, pool: np.ndarray, cap: int) -> np.ndarray:
    # rng is only consulted when there is an actual choice to make
    if len(pool) <= cap:
        return pool
    return np.sort(rng.choice(pool, size=cap, replace=False))


def sample_pairs(clip: FeatureClip, cfg: NceConfig) -> PairPlan:
    """Pick positives and negatives per anchor, deterministically from ``cfg.seed``.

    Ignore-class patches are neither anchors nor negatives. Anchors without a
    same-class peer are listed in ``skipped``.
    """
    rng = np.random.default_rng(cfg.seed)
    cls = clip.patch_class
    anchors, skipped = [], []
    for i in range(clip.num_patches):
        c = cls[i]
        if c == IGNORE:
            continue
        same = np.flatnonzero(cls == c)
        same = same[same != i]
        if len(same) == 0:
            skipped.append(i)
            continue
        pos = _subsample(rng, same, cfg.positive_cap)
        neg = _subsample(rng, np.flatnonzero((cls != c) & (cls != IGNORE)), cfg.num_negatives)
        anchors.append(Anchor(i, pos, neg))
    return PairPlan(clip.num_patches, anchors, skipped)


def _normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        raise ValueError("cannot L2-normalize a zero feature vector")
    return x / norms[:, None], norms


def nce_loss(clip: FeatureClip, cfg: NceConfig, plan: PairPlan | None = None) -> tuple[float, np.ndarray]:
    """Spatial-temporal InfoNCE over a two- (or more) frame clip.

    Per anchor i with positives P and negatives N, with a = (x_i . x) / temperature::

        L_i = mean_{p in P} [ a_p - logsumexp(a_p, a_N) ]
        L   = -sum_i L_i / denominator

    where the denominator is the number of contributing anchors (default) or
    all patches (``divide_by="all"``).
    """
    if plan is None:
        plan = sample_pairs(clip, cfg)
    if not plan.anchors:
        raise ValueError("no positive pairs: every anchor lacks a same-class peer")
    denom = plan.num_contributing if cfg.divide_by == "contributing" else plan.num_patches

    if cfg.normalize_features:
        z, norms = _normalize_rows(clip.features)
    else:
        z = clip.features
    tau = cfg.temperature
    rows = plan.rows
    sim = (z @ z.T) / tau
    logits = np.full((len(rows.anchor), 1 + rows.negatives.shape[1]), -np.inf)
    logits[:, 0] = sim[rows.anchor, rows.positive]
    neg_logits = sim[rows.anchor[:, None], rows.negatives]
    logits[:, 1:] = np.where(rows.neg_valid, neg_logits, -np.inf)
    peak = logits.max(axis=1, keepdims=True)
    lse = peak[:, 0] + np.log(np.exp(logits - peak).sum(axis=1))
    terms = rows.weight * (logits[:, 0] - lse)

    soft = np.exp(logits - lse[:, None])
    coef = -rows.weight / (denom * tau)
    dsim = np.zeros_like(sim)
    np.add.at(dsim, (rows.anchor, rows.positive), coef * (1.0 - soft[:, 0]))
    np.add.at(
        dsim,
        (np.broadcast_to(rows.anchor[:, None], rows.negatives.shape), rows.negatives),
        np.where(rows.neg_valid, -coef[:, None] * soft[:, 1:], 0.0),
    )

    value = -math.fsum(terms) / denom + 0.0
    grad_z = dsim @ z + dsim.T @ z
    if cfg.normalize_features:
        radial = np.sum(grad_z * z, axis=1, keepdims=True)
        grad = (grad_z - radial * z) / norms[:, None]
    else:
        grad = grad_z
    return value, grad


def _as_probs(probs) -> np.ndarray:
    arr = probs.values if isinstance(probs, ProbMap) else probs
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"probabilities must be C x H x W, got shape {arr.shape}")
    return arr


def _as_labels(gt, probs: np.ndarray) -> np.ndarray:
    labels = gt.labels if isinstance(gt, SegMask) else np.asarray(gt)
    labels = labels.astype(np.int64)
    if labels.shape != probs.shape[1:]:
        raise ValueError(f"mask shape {labels.shape} does not match probabilities {probs.shape[1:]}")
    valid = labels != IGNORE
    if not valid.any():
        raise ValueError("all pixels are ignored")
    if labels[valid].max() >= probs.shape[0]:
        raise ValueError(f"mask has class id >= C = {probs.shape[0]}")
    return labels


def ce_loss(probs, gt) -> tuple[float, np.ndarray]:
    """Mean of -ln(max(p_true, 1e-12)) over non-ignore pixels."""
    p = _as_probs(probs)
    labels = _as_labels(gt, p)
    ys, xs = np.nonzero(labels != IGNORE)
    cls = labels[ys, xs]
    p_true = p[cls, ys, xs]
    n = len(cls)
    clamped = np.maximum(p_true, CE_CLAMP)
    value = float(-np.log(clamped).sum() / n)
    grad = np.zeros_like(p)
    grad[cls, ys, xs] = np.where(p_true > CE_CLAMP, -1.0 / (n * clamped), 0.0)
    return value, grad


def dice_loss(probs, gt) -> tuple[float, np.ndarray]:
    """1 - mean over classes present in ``gt`` of (2 I + 1) / (sum p + sum g + 1)."""
    p = _as_probs(probs)
    labels = _as_labels(gt, p)
    valid = labels != IGNORE
    onehot = np.zeros_like(p)
    ys, xs = np.nonzero(valid)
    onehot[labels[ys, xs], ys, xs] = 1.0
    pv = p * valid
    present = np.flatnonzero(onehot.sum(axis=(1, 2)) > 0)

    inter = (pv * onehot).sum(axis=(1, 2))
    denom = pv.sum(axis=(1, 2)) + onehot.sum(axis=(1, 2)) + DICE_SMOOTH
    score = (2.0 * inter + DICE_SMOOTH) / denom
    value = 1.0 - float(score[present].sum() / len(present))

    grad = np.zeros_like(p)
    for c in present:
        dscore = (2.0 * onehot[c] * denom[c] - (2.0 * inter[c] + DICE_SMOOTH)) / denom[c] ** 2
        grad[c] = -dscore * valid / len(present)
    return value, grad


def seg_loss(probs, gt, w: LossWeights = LossWeights()) -> tuple[float, np.ndarray]:
    d_val, d_grad = dice_loss(probs, gt)
    c_val, c_grad = ce_loss(probs, gt)
    value = w.lambda3 * d_val + w.lambda4 * c_val
    return value, w.lambda3 * d_grad + w.lambda4 * c_grad


def total_loss(
    probs,
    gt,
    clip: FeatureClip,
    cfg: NceConfig,
    w: LossWeights = LossWeights(),
    plan: PairPlan | None = None,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Returns (value, d/dprobs, d/dfeatures).

    The NCE term is skipped entirely when ``lambda2 == 0``.
    """
    s_val, s_grad = seg_loss(probs, gt, w)
    if w.lambda2 == 0:
        n_val, n_grad = 0.0, np.zeros_like(clip.features)
    else:
        n_val, n_grad = nce_loss(clip, cfg, plan)
    value = w.lambda1 * s_val + w.lambda2 * n_val
    return value, w.lambda1 * s_grad, w.lambda2 * n_grad


def patch_labels(mask, grid_h: int, grid_w: int) -> np.ndarray:
    """Majority non-ignore label per patch of a grid_h x grid_w tiling, row-major.

    Ties between the top classes, and patches with no labelled pixel, give 255.
    """
    labels = mask.labels if isinstance(mask, SegMask) else np.asarray(mask)
    h, w = labels.shape
    if grid_h < 1 or grid_w < 1 or h % grid_h or w % grid_w:
        raise ValueError(f"{h}x{w} mask does not tile into a {grid_h}x{grid_w} patch grid")
    ph, pw = h // grid_h, w // grid_w
    tiles = labels.reshape(grid_h, ph, grid_w, pw).transpose(0, 2, 1, 3).reshape(grid_h * grid_w, ph * pw)
    out = np.full(len(tiles), IGNORE, dtype=np.int64)
    for k, tile in enumerate(tiles):
        counts = np.bincount(tile[tile != IGNORE].astype(np.int64), minlength=1)
        top = counts.max()
        if top > 0 and np.count_nonzero(counts == top) == 1:
            out[k] = int(np.argmax(counts))
    return out
