"""Central finite-difference checks of the analytic loss gradients."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .losses import (
    FeatureClip,
    LossWeights,
    NceConfig,
    ce_loss,
    dice_loss,
    nce_loss,
    sample_pairs,
    seg_loss,
    total_loss,
)

FD_STEP = 1e-5
REL_TOL = 1e-4
# components whose magnitudes fall below this are compared absolutely
REL_FLOOR = 1e-6


def finite_difference(func, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences of scalar ``func`` at ``x`` (any shape, float64)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        f_plus = func(x)
        flat[k] = orig - h
        f_minus = func(x)
        flat[k] = orig
        gflat[k] = (f_plus - f_minus) / (2 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def random_probs(rng: np.random.Generator, c: int, h: int, w: int) -> np.ndarray:
    logits = rng.normal(size=(c, h, w))
    e = np.exp(logits - logits.max(axis=0))
    return e / e.sum(axis=0)


def random_mask(rng: np.random.Generator, c: int, h: int, w: int, ignore_rate: float = 0.15) -> np.ndarray:
    labels = rng.integers(0, c, size=(h, w))
    labels[rng.random((h, w)) < ignore_rate] = 255
    if (labels == 255).all():
        labels[0, 0] = 0
    return labels


def random_clip(rng: np.random.Generator, m: int, d: int, num_classes: int) -> FeatureClip:
    cls = rng.integers(0, num_classes, size=m)
    # guarantee at least one anchor with a positive
    cls[1] = cls[0]
    x = rng.normal(scale=0.4, size=(m, d))
    frames = (np.arange(m) >= m // 2).astype(np.int64)
    return FeatureClip(x, cls, frames)


@dataclass
class Instance:
    probs: np.ndarray
    gt: np.ndarray
    clip: FeatureClip
    cfg: NceConfig
    weights: LossWeights


def random_instance(rng: np.random.Generator) -> Instance:
    c = int(rng.integers(2, 6))
    h = int(rng.integers(1, 9))
    w = int(rng.integers(1, 64 // h + 1))
    m = int(rng.integers(2, 17))
    d = int(rng.integers(1, 17))
    cfg = NceConfig(
        temperature=float(rng.uniform(0.1, 1.0)),
        num_negatives=int(rng.integers(0, 8)),
        positive_cap=int(rng.integers(1, 5)),
        seed=int(rng.integers(0, 2**32)),
        normalize_features=bool(rng.integers(0, 2)),
        divide_by=str(rng.choice(["contributing", "all"])),
    )
    weights = LossWeights(*rng.uniform(0.0, 2.0, size=4))
    return Instance(
        random_probs(rng, c, h, w),
        random_mask(rng, c, h, w),
        random_clip(rng, m, d, int(rng.integers(1, 5))),
        cfg,
        weights,
    )


def _check_nce(inst: Instance) -> float:
    plan = sample_pairs(inst.clip, inst.cfg)
    _, grad = nce_loss(inst.clip, inst.cfg, plan)
    numeric = finite_difference(
        lambda x: nce_loss(inst.clip.with_features(x), inst.cfg, plan)[0], inst.clip.features
    )
    return max_relative_error(grad, numeric)


def _check_prob_loss(loss):
    def check(inst: Instance) -> float:
        _, grad = loss(inst.probs, inst.gt)
        numeric = finite_difference(lambda p: loss(p, inst.gt)[0], inst.probs)
        return max_relative_error(grad, numeric)

    return check


def _check_seg(inst: Instance) -> float:
    _, grad = seg_loss(inst.probs, inst.gt, inst.weights)
    numeric = finite_difference(lambda p: seg_loss(p, inst.gt, inst.weights)[0], inst.probs)
    return max_relative_error(grad, numeric)


def _check_total(inst: Instance) -> float:
    plan = sample_pairs(inst.clip, inst.cfg)
    _, g_probs, g_feat = total_loss(inst.probs, inst.gt, inst.clip, inst.cfg, inst.weights, plan)
    n_probs = finite_difference(
        lambda p: total_loss(p, inst.gt, inst.clip, inst.cfg, inst.weights, plan)[0], inst.probs
    )
    n_feat = finite_difference(
        lambda x: total_loss(inst.probs, inst.gt, inst.clip.with_features(x), inst.cfg, inst.weights, plan)[0],
        inst.clip.features,
    )
    return max(max_relative_error(g_probs, n_probs), max_relative_error(g_feat, n_feat))


CHECKS = {
    "nce_loss": _check_nce,
    "ce_loss": _check_prob_loss(ce_loss),
    "dice_loss": _check_prob_loss(dice_loss),
    "seg_loss": _check_seg,
    "total_loss": _check_total,
}


@dataclass
class SuiteResult:
    max_errors: dict[str, float]
    instances: int
    seconds: float

    @property
    def passed(self) -> bool:
        return all(err < REL_TOL for err in self.max_errors.values())


def run_suite(instances: int = 50, seed: int = 0) -> SuiteResult:
    """Check every loss on ``instances`` random small problems each."""
    start = time.perf_counter()
    errors = {}
    for name, check in CHECKS.items():
        rng = np.random.default_rng([seed, len(errors)])
        errors[name] = max(check(random_instance(rng)) for _ in range(instances))
    return SuiteResult(errors, instances, time.perf_counter() - start)
