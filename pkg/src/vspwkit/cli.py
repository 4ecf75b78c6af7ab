"""``vspwkit`` command line: file-based pipelines over masks and tensors.

Exit status: 0 success, 1 domain error (message on stderr), 2 usage error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .ensemble import argmax_map, soft_average, vote, weighted_pair
from .gradcheck import REL_TOL, run_suite
from .label_map import MissingPolicy, filter_decision, parse_mapping, remap, valid_ratio
from .losses import FeatureClip, LossWeights, NceConfig, nce_loss, patch_labels, sample_pairs
from .metrics import ConfusionMatrix, accumulate, format_fraction, merge, miou
from .tensor_io import load_mask, load_tensor, write_mask, write_tensor
from .toytrain import ToyModel, generate, separation_report, train
from .tta import default_stride, hflip_merge, plan_windows, stitch


class CliError(Exception):
    pass


def _commit(outputs: list[tuple[Path, bytes]]) -> None:
    """Stage every output as a temp file, then rename all; nothing is left on failure."""
    staged = []
    try:
        for path, data in outputs:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
            staged.append((tmp, path))
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
        for tmp, path in staged:
            os.replace(tmp, path)
    finally:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)


def _emit(text: str, out: str | None) -> None:
    if out:
        _commit([(Path(out), text.encode("utf-8"))])
    else:
        sys.stdout.write(text)


def _expand_masks(inputs: list[str]) -> list[Path]:
    files = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            files.extend(sorted(p.glob("*.pgm")))
        else:
            files.append(p)
    return files


def _index_by_stem(root: Path) -> dict[str, Path]:
    if not root.is_dir():
        raise CliError(f"not a directory: {root}")
    index = {}
    for path in sorted(root.rglob("*.pgm")):
        key = path.relative_to(root).with_suffix("").as_posix()
        index[key] = path
    return index


def _pool_map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# --- label mapping -------------------------------------------------------


def cmd_remap(args) -> None:
    table = parse_mapping(Path(args.table).read_text(encoding="utf-8"))
    policy = MissingPolicy(args.missing)
    files = _expand_masks(args.inputs)
    names = [f.name for f in files]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise CliError(f"duplicate input file names: {', '.join(dupes)}")
    out_dir = Path(args.out)

    def one(path: Path):
        try:
            return out_dir / path.name, write_mask(remap(load_mask(path), table, policy))
        except ValueError as exc:
            raise CliError(f"{path}: {exc}") from None

    _commit(_pool_map(one, files, args.jobs))


def cmd_filter(args) -> None:
    files = _expand_masks(args.inputs)

    def one(path: Path) -> str:
        mask = load_mask(path)
        keep = filter_decision(mask, args.threshold, strict=args.strict)
        return f"{path}\t{valid_ratio(mask):.6f}\t{'keep' if keep else 'drop'}\n"

    _emit("".join(_pool_map(one, files, args.jobs)), args.output)


# --- evaluation ----------------------------------------------------------


def cmd_eval(args) -> None:
    gt_index = _index_by_stem(Path(args.gt))
    pred_index = _index_by_stem(Path(args.pred))
    missing_pred = sorted(set(gt_index) - set(pred_index))
    missing_gt = sorted(set(pred_index) - set(gt_index))
    if missing_pred or missing_gt:
        lines = [f"  no prediction for {k}" for k in missing_pred] + [f"  no ground truth for {k}" for k in missing_gt]
        raise CliError("unpaired files:\n" + "\n".join(lines))
    if not gt_index:
        raise CliError("no .pgm files found")
    keys = sorted(gt_index)

    def one(key: str) -> ConfusionMatrix:
        try:
            return accumulate(ConfusionMatrix.zeros(args.classes), load_mask(pred_index[key]), load_mask(gt_index[key]))
        except ValueError as exc:
            raise CliError(f"{key}: {exc}") from None

    per_frame = dict(zip(keys, _pool_map(one, keys, args.jobs)))
    out = []
    if args.per_video:
        videos: dict[str, ConfusionMatrix] = {}
        for key in keys:
            video = key.rsplit("/", 1)[0] if "/" in key else "."
            videos[video] = merge(videos[video], per_frame[key]) if video in videos else per_frame[key]
        scores = []
        for video, cm in videos.items():
            res = miou(cm, all_classes=args.all_classes)
            scores.append(res.miou)
            out.append(f"{video}\t{res.value!r}\n")
        mean = sum(scores, Fraction(0)) / len(scores)
        out.append(f"mIoU\t{format_fraction(mean)}\t{mean.numerator / mean.denominator!r}\n")
    else:
        total = ConfusionMatrix.zeros(args.classes)
        for key in keys:
            total = merge(total, per_frame[key])
        res = miou(total, all_classes=args.all_classes)
        out.append("class\tIoU\tdecimal\n")
        for c, iou in res.per_class:
            if iou is not None:
                out.append(f"{c}\t{format_fraction(iou)}\t{iou.numerator / iou.denominator!r}\n")
        out.append(f"mIoU\t{format_fraction(res.miou)}\t{res.value!r}\n")
    _emit("".join(out), args.output)


# --- aggregation ---------------------------------------------------------


def cmd_ensemble(args) -> None:
    maps = [load_tensor(p) for p in args.inputs]
    if args.mean:
        result = soft_average(maps)
    else:
        if len(maps) != 2:
            raise CliError("--tau takes exactly two inputs (first weighted by tau)")
        result = weighted_pair(maps[0], maps[1], args.tau)
    _commit([(Path(args.output), write_tensor(result))])


def cmd_vote(args) -> None:
    _commit([(Path(args.output), write_mask(vote([load_mask(p) for p in args.inputs])))])


def cmd_argmax(args) -> None:
    _commit([(Path(args.output), write_mask(argmax_map(load_tensor(args.input))))])


def _parse_plan(text: str) -> tuple[int, int, int, int, int]:
    try:
        parts = [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"plan must be integers H,W,hw,ww[,s], got {text!r}") from None
    if len(parts) == 4:
        parts.append(default_stride(min(parts[2], parts[3])))
    if len(parts) != 5:
        raise argparse.ArgumentTypeError(f"plan must be H,W,hw,ww[,s], got {text!r}")
    return tuple(parts)


def cmd_tta_merge(args) -> None:
    plan = plan_windows(*args.plan)
    result = stitch(plan, [load_tensor(p) for p in args.inputs])
    _commit([(Path(args.output), write_tensor(result))])


def cmd_flip_merge(args) -> None:
    result = hflip_merge(load_tensor(args.input), load_tensor(args.flipped))
    _commit([(Path(args.output), write_tensor(result))])


# --- losses --------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    result = run_suite(args.instances, args.seed)
    for name, err in result.max_errors.items():
        status = "ok" if err < REL_TOL else "FAIL"
        print(f"{name}\t{err:.3e}\t{status}")
    print(f"instances\t{result.instances}")
    return 0 if result.passed else 1


def _nce_config(args) -> NceConfig:
    return NceConfig(
        temperature=args.temperature,
        num_negatives=args.negatives,
        positive_cap=args.positive_cap,
        seed=args.seed,
        normalize_features=args.normalize,
        divide_by=args.divide_by,
    )


def cmd_nce_eval(args) -> None:
    frames = [load_tensor(p) for p in args.frames]
    if len({f.shape for f in frames}) != 1:
        raise CliError("feature tensors must share one shape")
    d, gh, gw = frames[0].shape
    features = np.concatenate([f.values.reshape(d, gh * gw).T for f in frames]).astype(np.float64)
    if args.labels:
        tokens = Path(args.labels).read_text(encoding="utf-8").split()
        try:
            classes = np.array([int(t) for t in tokens], dtype=np.int64)
        except ValueError:
            raise CliError(f"{args.labels}: class ids must be integers") from None
    else:
        if len(args.gt) != len(frames):
            raise CliError(f"need one ground-truth mask per frame ({len(frames)}), got {len(args.gt)}")
        classes = np.concatenate([patch_labels(load_mask(p), gh, gw) for p in args.gt])
    if len(classes) != len(features):
        raise CliError(f"{len(classes)} class ids for {len(features)} patches")
    frame_index = np.repeat(np.arange(len(frames)), gh * gw)
    clip = FeatureClip(features, classes, frame_index)
    cfg = _nce_config(args)
    plan = sample_pairs(clip, cfg)
    value, _ = nce_loss(clip, cfg, plan)
    print(f"nce\t{value!r}")
    print(f"patches\t{plan.num_patches}")
    print(f"contributing\t{plan.num_contributing}")
    print(f"skipped\t{len(plan.skipped)}")


def cmd_train_toy(args) -> None:
    clip = generate(
        args.seed,
        num_classes=args.num_classes,
        d_in=args.d_in,
        m=args.patches,
        frames=args.frames,
        sigma_class=args.sigma_class,
        sigma_t=args.sigma_t,
        margin=args.margin,
    )
    model = ToyModel.init(args.seed, args.d_in, args.d_emb, args.num_classes)
    cfg = _nce_config(args)
    weights = LossWeights(args.lambda1, args.lambda2, args.lambda3, args.lambda4)
    before = separation_report(model, clip)
    trained, log = train(model, clip, cfg, weights, lr=args.lr, steps=args.steps)
    after = separation_report(trained, clip)
    if args.json:
        doc = {
            "config": {
                "seed": args.seed,
                "lr": args.lr,
                "steps": args.steps,
                "frames": args.frames,
                "nce": dataclasses.asdict(cfg),
                "weights": dataclasses.asdict(weights),
            },
            "log": [dataclasses.asdict(e) for e in log],
            "initial": {"intra": before.intra, "inter": before.inter, "gap": before.gap},
            "final": {"intra": after.intra, "inter": after.inter, "gap": after.gap},
            "class_counts": after.class_counts,
        }
        text = json.dumps(doc, indent=2) + "\n"
    else:
        lines = [f"# temperature={cfg.temperature!r} negatives={cfg.num_negatives} positive_cap={cfg.positive_cap}"]
        lines.append("step\ttotal\tseg\tnce")
        lines += [f"{e.step}\t{e.total!r}\t{e.seg!r}\t{e.nce!r}" for e in log]
        for tag, rep in (("initial", before), ("final", after)):
            lines.append(f"# {tag}\tintra={rep.intra!r}\tinter={rep.inter!r}\tgap={rep.gap!r}")
        counts = " ".join(f"{c}:{n}" for c, n in after.class_counts.items())
        lines.append(f"# class_counts\t{counts}")
        text = "\n".join(lines) + "\n"
    _emit(text, args.output)


# --- parser --------------------------------------------------------------


def _add_nce_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, required=True, help="seed for pair sampling")
    p.add_argument("--temperature", type=float, default=0.1)
    p.add_argument("--negatives", type=int, default=64, help="negatives per anchor (K)")
    p.add_argument("--positive-cap", type=int, default=8)
    p.add_argument("--normalize", action="store_true", help="L2-normalize features (cosine similarity)")
    p.add_argument("--divide-by", choices=["contributing", "all"], default="contributing")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vspwkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"vspwkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("remap", help="remap PGM masks through a mapping table")
    p.add_argument("inputs", nargs="+", help="PGM files or directories")
    p.add_argument("--table", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--missing", choices=[m.value for m in MissingPolicy], default="ignore")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_remap)

    p = sub.add_parser("filter", help="keep/drop manifest by valid-pixel ratio")
    p.add_argument("inputs", nargs="+", help="PGM files or directories")
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--strict", action="store_true", help="keep only ratio > threshold")
    p.add_argument("-o", "--output", help="manifest path (default stdout)")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("eval", help="mIoU of prediction masks against ground truth")
    p.add_argument("--classes", type=int, default=124)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--all-classes", action="store_true", help="divide by every class, absent ones scoring 0")
    p.add_argument("--per-video", action="store_true", help="mIoU per subdirectory, then averaged")
    p.add_argument("-o", "--output")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ensemble", help="soft-ensemble LGT probability maps")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--tau", type=float, help="weight of the first input")
    mode.add_argument("--mean", action="store_true", help="average all inputs")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("vote", help="per-pixel majority vote over PGM masks")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_vote)

    p = sub.add_parser("argmax", help="decode an LGT map to a PGM mask")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_argmax)

    p = sub.add_parser("tta-merge", help="stitch sliding-window LGT maps")
    p.add_argument("--plan", type=_parse_plan, required=True, metavar="H,W,hw,ww[,s]")
    p.add_argument("inputs", nargs="+", help="window maps in plan order")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_tta_merge)

    p = sub.add_parser("flip-merge", help="average a map with its horizontally-flipped counterpart")
    p.add_argument("input")
    p.add_argument("flipped", help="output on the mirrored input")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_flip_merge)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss gradient")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--instances", type=int, default=50)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("nce-eval", help="contrastive loss of per-frame feature maps")
    p.add_argument("frames", nargs="+", help="one D x h x w LGT feature map per frame")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--labels", help="sidecar of whitespace-separated patch class ids, frame-major")
    src.add_argument("--gt", nargs="+", help="one PGM per frame; patch class = majority label")
    _add_nce_flags(p)
    p.set_defaults(func=cmd_nce_eval)

    p = sub.add_parser("train-toy", help="toy gradient-descent run of the composite loss")
    _add_nce_flags(p)
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--lambda2", type=float, default=0.1)
    p.add_argument("--lambda3", type=float, default=5.0)
    p.add_argument("--lambda4", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--frames", type=int, default=2)
    p.add_argument("--num-classes", type=int, default=3)
    p.add_argument("--patches", type=int, default=24, help="patches per frame")
    p.add_argument("--d-in", type=int, default=8)
    p.add_argument("--d-emb", type=int, default=8)
    p.add_argument("--sigma-class", type=float, default=0.6)
    p.add_argument("--sigma-t", type=float, default=0.15)
    p.add_argument("--margin", type=float, default=2.0)
    p.add_argument("--json", action="store_true")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_train_toy)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        status = args.func(args)
    except (CliError, ValueError, OSError) as exc:
        print(f"vspwkit {args.command}: {exc}", file=sys.stderr)
        return 1
    return status or 0


if __name__ == "__main__":
    sys.exit(main())
