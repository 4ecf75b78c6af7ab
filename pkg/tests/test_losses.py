import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vspwkit.gradcheck import finite_difference, max_relative_error, random_clip, random_mask, random_probs
from vspwkit.losses import (
    FeatureClip,
    LossWeights,
    NceConfig,
    ce_loss,
    dice_loss,
    nce_loss,
    patch_labels,
    sample_pairs,
    seg_loss,
    total_loss,
)
from vspwkit.tensor_io import ProbMap, SegMask

LN2 = math.log(2.0)
SINGLE_POS = -math.log(math.e / (math.e + 1.0))


def naive_nce(clip, cfg, plan):
    """Direct transcription with plain exp/log, no stabilization."""
    x = clip.features
    if cfg.normalize_features:
        x = x / np.linalg.norm(x, axis=1, keepdims=True)
    total = 0.0
    for a in plan.anchors:
        i = a.index
        li = 0.0
        for p in a.positives:
            num = math.exp(float(x[i] @ x[p]) / cfg.temperature)
            den = num + sum(math.exp(float(x[i] @ x[n]) / cfg.temperature) for n in a.negatives)
            li += math.log(num / den)
        total += li / len(a.positives)
    denom = plan.num_contributing if cfg.divide_by == "contributing" else plan.num_patches
    return -total / denom


# --- pair sampling ---------------------------------------------------------


def test_pairs_two_same_class():
    clip = FeatureClip(np.zeros((2, 1)), [0, 0])
    plan = sample_pairs(clip, NceConfig())
    assert plan.anchors[0].index == 0
    assert plan.anchors[0].positives.tolist() == [1]
    assert plan.anchors[0].negatives.tolist() == []


def test_pairs_two_classes_one_negative():
    clip = FeatureClip(np.zeros((4, 1)), [0, 0, 1, 1])
    plan = sample_pairs(clip, NceConfig(num_negatives=1, seed=3))
    assert [a.index for a in plan.anchors] == [0, 1, 2, 3]
    for a in plan.anchors:
        assert a.positives.tolist() == [a.index ^ 1]
        assert len(a.negatives) == 1
        assert clip.patch_class[a.negatives[0]] != clip.patch_class[a.index]


def test_pairs_all_distinct_skips_everyone():
    clip = FeatureClip(np.zeros((3, 1)), [0, 1, 2])
    plan = sample_pairs(clip, NceConfig())
    assert plan.anchors == [] and plan.skipped == [0, 1, 2]
    with pytest.raises(ValueError, match="no positive pairs"):
        nce_loss(clip, NceConfig())


def test_ignore_patches_neither_anchor_nor_negative():
    clip = FeatureClip(np.zeros((4, 1)), [0, 0, 255, 1])
    plan = sample_pairs(clip, NceConfig())
    assert [a.index for a in plan.anchors] == [0, 1]
    assert all(2 not in a.negatives.tolist() and 2 not in a.positives.tolist() for a in plan.anchors)


@settings(max_examples=50)
@given(st.lists(st.integers(0, 3), min_size=2, max_size=30), st.integers(0, 2**32 - 1), st.integers(0, 5), st.integers(1, 4))
def test_pair_sets_respect_classes(classes, seed, k, cap):
    clip = FeatureClip(np.zeros((len(classes), 1)), classes)
    cfg = NceConfig(num_negatives=k, positive_cap=cap, seed=seed)
    plan = sample_pairs(clip, cfg)
    cls = np.array(classes)
    for a in plan.anchors:
        assert len(a.positives) <= cap and len(a.negatives) <= k
        assert a.index not in a.positives.tolist()
        assert np.all(cls[a.positives] == cls[a.index])
        assert np.all(cls[a.negatives] != cls[a.index])
        assert len(set(a.positives.tolist())) == len(a.positives)
        assert len(set(a.negatives.tolist())) == len(a.negatives)
    again = sample_pairs(clip, cfg)
    assert [(a.positives.tolist(), a.negatives.tolist()) for a in again.anchors] == [
        (a.positives.tolist(), a.negatives.tolist()) for a in plan.anchors
    ]


# --- nce values ------------------------------------------------------------


def test_nce_symmetric_case():
    # orthogonal features: every dot product is 0
    clip = FeatureClip(np.eye(3), [0, 0, 1])
    value, _ = nce_loss(clip, NceConfig(temperature=1.0))
    assert value == pytest.approx(LN2, abs=1e-9)
    assert value == pytest.approx(0.693147, abs=1e-6)


def test_nce_single_positive_case():
    clip = FeatureClip(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), [0, 0, 1])
    value, _ = nce_loss(clip, NceConfig(temperature=1.0))
    assert value == pytest.approx(SINGLE_POS, abs=1e-9)
    assert value == pytest.approx(0.313262, abs=1e-6)


def test_nce_zero_negatives_is_exactly_zero(rng):
    clip = random_clip(rng, 12, 5, 3)
    value, grad = nce_loss(clip, NceConfig(num_negatives=0))
    assert value == 0.0
    assert not np.any(grad)


def test_divide_by_all_scales_by_anchor_fraction():
    clip = FeatureClip(np.eye(4), [0, 0, 1, 2])
    contributing, _ = nce_loss(clip, NceConfig(temperature=1.0))
    everyone, _ = nce_loss(clip, NceConfig(temperature=1.0, divide_by="all"))
    assert everyone == pytest.approx(contributing * 2 / 4)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans(), st.sampled_from(["contributing", "all"]))
def test_nce_stabilized_matches_naive(seed, normalize, divide_by):
    rng = np.random.default_rng(seed)
    clip = random_clip(rng, int(rng.integers(2, 17)), int(rng.integers(1, 9)), 3)
    cfg = NceConfig(temperature=0.5, num_negatives=4, seed=seed, normalize_features=normalize, divide_by=divide_by)
    plan = sample_pairs(clip, cfg)
    value, _ = nce_loss(clip, cfg, plan)
    assert value == pytest.approx(naive_nce(clip, cfg, plan), rel=1e-10, abs=1e-12)


def test_nce_survives_large_logits():
    clip = FeatureClip(np.array([[30.0, 0.0], [30.0, 0.0], [0.0, 30.0], [-30.0, 0.0]]), [0, 0, 1, 1])
    value, grad = nce_loss(clip, NceConfig(temperature=0.01))
    assert math.isfinite(value) and np.all(np.isfinite(grad))


def test_nce_directional_monotonicity(rng):
    # anchor 0, positive 1, negative 2; nudge the pair dot products directly
    base = np.array([[1.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.2, 0.0, 0.7]])
    cfg = NceConfig(temperature=0.3)
    clip = FeatureClip(base, [0, 0, 1])

    def loss_with(x):
        return nce_loss(clip.with_features(x), cfg)[0]

    moved_pos = base.copy()
    moved_pos[1] += 0.1 * base[0]  # raises x0.x1 (and x1.x0), leaves negatives alone
    assert loss_with(moved_pos) < loss_with(base)
    moved_neg = base.copy()
    moved_neg[2] += 0.1 * base[0]  # raises x0.x2
    assert loss_with(moved_neg) > loss_with(base)


def test_nce_is_deterministic(rng):
    clip = random_clip(rng, 16, 6, 3)
    cfg = NceConfig(num_negatives=3, positive_cap=2, seed=99)
    v1, g1 = nce_loss(clip, cfg)
    v2, g2 = nce_loss(clip, cfg)
    assert v1 == v2 and g1.tobytes() == g2.tobytes()


# --- segmentation losses ---------------------------------------------------


def _uniform_two_pixels():
    return np.full((2, 1, 2), 0.5), np.array([[0, 1]])


def test_ce_closed_forms():
    probs = np.array([0.5, 0.5]).reshape(2, 1, 1)
    assert ce_loss(probs, [[0]])[0] == pytest.approx(LN2, abs=1e-12)
    probs = np.array([0.25, 0.75]).reshape(2, 1, 1)
    assert ce_loss(probs, [[0]])[0] == pytest.approx(math.log(4), abs=1e-12)
    onehot = np.array([1.0, 0.0]).reshape(2, 1, 1)
    assert ce_loss(onehot, [[0]])[0] == 0.0


def test_ce_clamp():
    probs = np.array([0.0, 1.0]).reshape(2, 1, 1)
    value, grad = ce_loss(probs, [[0]])
    assert value == pytest.approx(-math.log(1e-12))
    assert not np.any(grad)


def test_dice_closed_form():
    probs, gt = _uniform_two_pixels()
    assert dice_loss(probs, gt)[0] == pytest.approx(1 / 3, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_dice_perfect_prediction_is_zero(seed):
    rng = np.random.default_rng(seed)
    gt = rng.integers(0, 4, size=(3, 5))
    onehot = (np.arange(4)[:, None, None] == gt[None]).astype(float)
    assert dice_loss(onehot, gt)[0] == 0.0


def test_all_ignored_is_an_error():
    probs = np.full((2, 1, 2), 0.5)
    for loss in (ce_loss, dice_loss):
        with pytest.raises(ValueError, match="ignored"):
            loss(probs, [[255, 255]])


def test_losses_ignore_ignored_pixels(rng):
    probs = random_probs(rng, 3, 2, 3)
    gt = np.array([[0, 1, 255], [2, 255, 1]])
    for loss in (ce_loss, dice_loss):
        value, grad = loss(probs, gt)
        assert not np.any(grad[:, 0, 2]) and not np.any(grad[:, 1, 1])
        altered = probs.copy()
        altered[:, 0, 2] = [0.9, 0.05, 0.05]
        assert loss(altered, gt)[0] == value


def test_accepts_probmap_and_segmask(rng):
    p = random_probs(rng, 3, 2, 2).astype(np.float32)
    gt = np.array([[0, 1], [2, 0]])
    assert ce_loss(ProbMap(p), SegMask(gt))[0] == ce_loss(p.astype(np.float64), gt)[0]


def test_seg_loss_default_weights():
    probs, gt = _uniform_two_pixels()
    value, _ = seg_loss(probs, gt, LossWeights())
    assert value == pytest.approx(5 / 3 + LN2, abs=1e-12)
    assert value == pytest.approx(2.359814, abs=1e-6)


def test_seg_loss_zero_weights(rng):
    probs = random_probs(rng, 3, 3, 3)
    gt = random_mask(rng, 3, 3, 3)
    ce = ce_loss(probs, gt)
    dice = dice_loss(probs, gt)
    only_ce = seg_loss(probs, gt, LossWeights(lambda3=0, lambda4=1))
    only_dice = seg_loss(probs, gt, LossWeights(lambda3=1, lambda4=0))
    assert only_ce[0] == ce[0] and np.array_equal(only_ce[1], ce[1])
    assert only_dice[0] == dice[0] and np.array_equal(only_dice[1], dice[1])


def test_total_loss_default_example():
    probs, gt = _uniform_two_pixels()
    clip = FeatureClip(np.eye(3), [0, 0, 1])
    value, _, _ = total_loss(probs, gt, clip, NceConfig(temperature=1.0), LossWeights())
    assert value == pytest.approx(5 / 3 + LN2 + 0.1 * LN2, abs=1e-12)
    assert value == pytest.approx(2.429129, abs=1e-6)


def test_total_loss_weight_endpoints(rng):
    probs = random_probs(rng, 3, 2, 4)
    gt = random_mask(rng, 3, 2, 4)
    clip = random_clip(rng, 10, 4, 3)
    cfg = NceConfig(num_negatives=3)
    seg = seg_loss(probs, gt)
    v, gp, gf = total_loss(probs, gt, clip, cfg, LossWeights(lambda2=0))
    assert v == seg[0] and np.array_equal(gp, seg[1]) and not np.any(gf)
    nce = nce_loss(clip, cfg)
    v, gp, gf = total_loss(probs, gt, clip, cfg, LossWeights(lambda1=0, lambda2=1))
    assert v == nce[0] and not np.any(gp) and np.array_equal(gf, nce[1])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 3), st.floats(0, 3))
def test_seg_loss_linear_in_weights(seed, a, b):
    rng = np.random.default_rng(seed)
    probs = random_probs(rng, 3, 2, 3)
    gt = random_mask(rng, 3, 2, 3)
    w1, w2 = LossWeights(lambda3=a, lambda4=b), LossWeights(lambda3=2 * a, lambda4=2 * b)
    assert seg_loss(probs, gt, w2)[0] == pytest.approx(2 * seg_loss(probs, gt, w1)[0], rel=1e-12, abs=1e-15)


# --- gradients (spot checks; the full suite lives in test_acceptance) -------


@pytest.mark.parametrize("loss", [ce_loss, dice_loss, seg_loss])
def test_prob_loss_gradients(loss, rng):
    probs = random_probs(rng, 4, 3, 3)
    gt = random_mask(rng, 4, 3, 3)
    _, grad = loss(probs, gt)
    numeric = finite_difference(lambda p: loss(p, gt)[0], probs)
    assert max_relative_error(grad, numeric) < 1e-4


@pytest.mark.parametrize("normalize", [False, True])
def test_nce_gradient(normalize, rng):
    clip = random_clip(rng, 10, 4, 3)
    cfg = NceConfig(temperature=0.2, num_negatives=3, positive_cap=2, normalize_features=normalize)
    plan = sample_pairs(clip, cfg)
    _, grad = nce_loss(clip, cfg, plan)
    numeric = finite_difference(lambda x: nce_loss(clip.with_features(x), cfg, plan)[0], clip.features)
    assert max_relative_error(grad, numeric) < 1e-4


# --- patch labels -----------------------------------------------------------


def test_patch_labels_majority_and_ties():
    mask = np.array(
        [
            [1, 1, 2, 3],
            [1, 4, 3, 2],
            [255, 255, 5, 5],
            [255, 7, 5, 255],
        ]
    )
    assert patch_labels(mask, 2, 2).tolist() == [1, 255, 7, 5]


def test_patch_labels_requires_tiling():
    with pytest.raises(ValueError):
        patch_labels(np.zeros((3, 4), dtype=int), 2, 2)
