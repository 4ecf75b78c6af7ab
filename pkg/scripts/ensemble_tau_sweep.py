"""Sweep the ensemble coefficient over two synthetic models and report mIoU.

Two noisy "models" are simulated from a random ground truth, each confident on
a different subset of classes, so the blend beats either endpoint.

    python scripts/ensemble_tau_sweep.py --seed 0
"""
import argparse

import numpy as np

from vspwkit.ensemble import argmax_map, weighted_pair
from vspwkit.metrics import ConfusionMatrix, accumulate, miou
from vspwkit.tensor_io import ProbMap, SegMask


def fake_model(rng, gt, num_classes, strong):
    logits = rng.normal(scale=1.0, size=(num_classes,) + gt.shape)
    boost = np.where(np.isin(gt, strong), 2.5, 0.8)
    np.put_along_axis(logits, gt[None], np.take_along_axis(logits, gt[None], 0) + boost, axis=0)
    e = np.exp(logits - logits.max(axis=0))
    return ProbMap((e / e.sum(axis=0)).astype(np.float32))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--seed", type=int, required=True)
    parser.add_argument("--classes", type=int, default=6)
    parser.add_argument("--size", type=int, default=64)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    gt = rng.integers(0, args.classes, size=(args.size, args.size))
    half = args.classes // 2
    p1 = fake_model(rng, gt, args.classes, np.arange(half))
    p2 = fake_model(rng, gt, args.classes, np.arange(half, args.classes))
    print("tau\tmIoU")
    for tau in np.round(np.linspace(0, 1, 11), 1):
        pred = argmax_map(weighted_pair(p1, p2, float(tau)))
        cm = accumulate(ConfusionMatrix.zeros(args.classes), pred, SegMask(gt))
        print(f"{tau:.1f}\t{miou(cm).value:.4f}")


if __name__ == "__main__":
    main()
