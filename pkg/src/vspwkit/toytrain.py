"""Desk-scale demonstration: gradient descent on seg + NCE loss with a linear model.

Each patch is one "pixel" for the segmentation terms; its embedding feeds the
contrastive term. Frames after the first are jittered copies of the first, so
the same physical patch appears once per frame.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .losses import FeatureClip, LossWeights, NceConfig, nce_loss, seg_loss


class TrainingDiverged(ValueError):
    pass


@dataclass
class ToyModel:
    embed: np.ndarray  # D_in x D_emb
    classify: np.ndarray  # D_emb x C

    @classmethod
    def init(cls, seed: int, d_in: int = 8, d_emb: int = 8, num_classes: int = 3) -> "ToyModel":
        rng = np.random.default_rng([seed, 1])
        return cls(
            rng.normal(scale=1.0 / math.sqrt(d_in), size=(d_in, d_emb)),
            rng.normal(scale=1.0 / math.sqrt(d_emb), size=(d_emb, num_classes)),
        )

    def copy(self) -> "ToyModel":
        return ToyModel(self.embed.copy(), self.classify.copy())

    def embeddings(self, inputs: np.ndarray) -> np.ndarray:
        return inputs @ self.embed


@dataclass(frozen=True)
class SynthClip:
    inputs: np.ndarray  # F x M x D_in
    classes: np.ndarray  # M, shared by all frames
    seed: int

    @property
    def num_frames(self) -> int:
        return self.inputs.shape[0]

    def flat_inputs(self) -> np.ndarray:
        f, m, d = self.inputs.shape
        return self.inputs.reshape(f * m, d)

    def flat_classes(self) -> np.ndarray:
        return np.tile(self.classes, self.num_frames)

    def frame_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_frames), len(self.classes))


def generate(
    seed: int,
    num_classes: int = 3,
    d_in: int = 8,
    m: int = 24,
    frames: int = 2,
    sigma_class: float = 0.6,
    sigma_t: float = 0.15,
    margin: float = 2.0,
) -> SynthClip:
    """Gaussian class clusters; frame t+1 = frame t + N(0, sigma_t^2) jitter.

    ``m`` is the patch count per frame. Class means sit on random orthonormal
    directions scaled by ``margin`` (so any two are margin * sqrt(2) apart)
    when ``num_classes <= d_in``, otherwise they are i.i.d. N(0, margin^2).
    """
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if m < 2 * num_classes:
        raise ValueError(f"m = {m} cannot hold two patches for each of {num_classes} classes")
    if frames < 1:
        raise ValueError("need at least one frame")
    rng = np.random.default_rng(seed)
    if num_classes <= d_in:
        basis, _ = np.linalg.qr(rng.normal(size=(d_in, d_in)))
        means = margin * basis[:, :num_classes].T
    else:
        means = rng.normal(scale=margin, size=(num_classes, d_in))
    classes = rng.permutation(np.arange(m) % num_classes)
    first = means[classes] + rng.normal(scale=sigma_class, size=(m, d_in))
    out = [first]
    for _ in range(frames - 1):
        out.append(out[-1] + rng.normal(scale=sigma_t, size=(m, d_in)))
    return SynthClip(np.stack(out), classes, seed)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class StepLog:
    step: int
    total: float
    seg: float
    nce: float


def objective(model: ToyModel, clip: SynthClip, cfg: NceConfig, w: LossWeights):
    """Returns (total, seg, nce, d/dembed, d/dclassify)."""
    x = clip.flat_inputs()
    labels = clip.flat_classes()
    emb = x @ model.embed
    probs = _softmax_rows(emb @ model.classify)
    # one row of "pixels": C x 1 x N
    s_val, s_grad = seg_loss(probs.T[:, None, :], labels[None, :], w)
    feat = FeatureClip(emb, labels, clip.frame_index())
    n_val, n_grad = nce_loss(feat, cfg)
    total = w.lambda1 * s_val + w.lambda2 * n_val

    g_probs = w.lambda1 * s_grad[:, 0, :].T
    g_logits = probs * (g_probs - np.sum(probs * g_probs, axis=1, keepdims=True))
    g_emb = g_logits @ model.classify.T + w.lambda2 * n_grad
    return total, s_val, n_val, x.T @ g_emb, emb.T @ g_logits


def train(
    model: ToyModel,
    data,
    cfg: NceConfig = NceConfig(),
    w: LossWeights = LossWeights(),
    lr: float = 0.05,
    steps: int = 200,
) -> tuple[ToyModel, list[StepLog]]:
    """Plain gradient descent. ``data`` is one SynthClip (reused every step) or an iterable of them.

    Each log entry holds the losses evaluated before that step's update.
    """
    if not lr >= 0:
        raise ValueError("learning rate must be >= 0")
    stream = itertools.repeat(data) if isinstance(data, SynthClip) else iter(data)
    model = model.copy()
    log = []
    for step, clip in zip(range(steps), stream):
        # divergence is detected explicitly below
        with np.errstate(over="ignore", invalid="ignore"):
            total, s_val, n_val, g_embed, g_cls = objective(model, clip, cfg, w)
        if not all(math.isfinite(v) for v in (total, s_val, n_val)):
            raise TrainingDiverged(f"non-finite loss at step {step}")
        log.append(StepLog(step, total, s_val, n_val))
        model.embed = model.embed - lr * g_embed
        model.classify = model.classify - lr * g_cls
        if not (np.all(np.isfinite(model.embed)) and np.all(np.isfinite(model.classify))):
            raise TrainingDiverged(f"non-finite parameters after step {step}")
    return model, log


@dataclass(frozen=True)
class SeparationReport:
    intra: float
    inter: float
    class_counts: dict[int, int] = field(default_factory=dict)
    skipped_classes: list[int] = field(default_factory=list)

    @property
    def gap(self) -> float:
        return self.intra - self.inter


def cosine_stats(embeddings: np.ndarray, classes: np.ndarray) -> SeparationReport:
    """Mean cosine over all same-class and all cross-class unordered pairs."""
    norms = np.linalg.norm(embeddings, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero embedding has no direction")
    unit = embeddings / norms[:, None]
    cos = unit @ unit.T
    iu, ju = np.triu_indices(len(classes), k=1)
    same = classes[iu] == classes[ju]
    ids, counts = np.unique(classes, return_counts=True)
    class_counts = {int(c): int(n) for c, n in zip(ids, counts)}
    skipped = [c for c, n in class_counts.items() if n < 2]
    intra = float(cos[iu[same], ju[same]].mean()) if same.any() else float("nan")
    inter = float(cos[iu[~same], ju[~same]].mean()) if (~same).any() else float("nan")
    return SeparationReport(intra, inter, class_counts, skipped)


def separation_report(model: ToyModel, clip: SynthClip) -> SeparationReport:
    return cosine_stats(model.embeddings(clip.flat_inputs()), clip.flat_classes())
