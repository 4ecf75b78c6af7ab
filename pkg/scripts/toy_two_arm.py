"""Two-arm toy experiment: composite loss with and without the contrastive term.

Prints, per seed, intra-class cosine and (intra - inter) gap before training and
after training with lambda2 = 0 and lambda2 = 0.1.

    python scripts/toy_two_arm.py --seeds 0 1 2 3 4 --frames 2
"""
import argparse

from vspwkit.losses import LossWeights, NceConfig
from vspwkit.toytrain import ToyModel, generate, separation_report, train


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--frames", type=int, default=2)
    parser.add_argument("--steps", type=int, default=200)
    parser.add_argument("--lr", type=float, default=0.05)
    parser.add_argument("--lambda2", type=float, default=0.1)
    args = parser.parse_args()

    print("seed\tinit_intra\tinit_gap\tbase_intra\tbase_gap\tnce_intra\tnce_gap\tnce_first\tnce_last")
    for seed in args.seeds:
        clip = generate(seed, frames=args.frames)
        model = ToyModel.init(seed)
        init = separation_report(model, clip)
        base, _ = train(model, clip, NceConfig(seed=seed), LossWeights(lambda2=0.0), args.lr, args.steps)
        contrast, log = train(model, clip, NceConfig(seed=seed), LossWeights(lambda2=args.lambda2), args.lr, args.steps)
        b, c = separation_report(base, clip), separation_report(contrast, clip)
        print(
            f"{seed}\t{init.intra:.4f}\t{init.gap:.4f}\t{b.intra:.4f}\t{b.gap:.4f}"
            f"\t{c.intra:.4f}\t{c.gap:.4f}\t{log[0].nce:.4f}\t{log[-1].nce:.4f}"
        )


if __name__ == "__main__":
    main()
