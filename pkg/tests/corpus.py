"""Small on-disk corpus exercising every CLI subcommand."""
from pathlib import Path

import numpy as np

from vspwkit.tensor_io import IGNORE, ProbMap, SegMask, write_mask, write_tensor


def _mask(path: Path, labels) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(write_mask(SegMask(np.asarray(labels))))
    return path


def _tensor(path: Path, values, normalized=True) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(write_tensor(ProbMap(np.asarray(values, dtype=np.float32), normalized)))
    return path


def _softmax(rng, c, h, w):
    z = rng.normal(size=(c, h, w))
    e = np.exp(z - z.max(axis=0))
    return e / e.sum(axis=0)


def build(root: Path) -> dict:
    rng = np.random.default_rng(2023)
    c = {}
    one_ignore = np.zeros(9, dtype=np.uint8)
    one_ignore[0] = IGNORE
    two_ignore = np.zeros(9, dtype=np.uint8)
    two_ignore[:2] = IGNORE
    c["filter_dir"] = root / "filter"
    _mask(c["filter_dir"] / "a.pgm", one_ignore.reshape(3, 3))
    _mask(c["filter_dir"] / "b.pgm", two_ignore.reshape(3, 3))

    c["table"] = root / "map.tsv"
    c["table"].write_text("# coco -> vspw\n0\t2\n1\t-\n2\t2\n")
    c["remap_dir"] = root / "coco"
    _mask(c["remap_dir"] / "x.pgm", [[0, 1], [2, 7]])
    _mask(c["remap_dir"] / "y.pgm", [[0, 0], [1, 255]])

    c["gt_dir"] = root / "gt"
    c["pred_dir"] = root / "pred"
    for video in ("v1", "v2"):
        for frame in range(2):
            gt = rng.integers(0, 4, size=(6, 6))
            gt[0, 0] = IGNORE
            pred = np.where(rng.random((6, 6)) < 0.7, np.where(gt == IGNORE, 0, gt), rng.integers(0, 4, size=(6, 6)))
            _mask(c["gt_dir"] / video / f"{frame:04d}.pgm", gt)
            _mask(c["pred_dir"] / video / f"{frame:04d}.pgm", pred)

    c["p1"] = _tensor(root / "p1.lgt", _softmax(rng, 3, 4, 5))
    c["p2"] = _tensor(root / "p2.lgt", _softmax(rng, 3, 4, 5))
    c["p3"] = _tensor(root / "p3.lgt", _softmax(rng, 3, 4, 5))
    c["votes"] = [_mask(root / f"vote{i}.pgm", rng.integers(0, 3, size=(4, 5))) for i in range(3)]

    # plan 6,7,4,4,2 -> y origins [0, 2], x origins [0, 2, 3]
    c["plan"] = "6,7,4,4,2"
    c["windows"] = [_tensor(root / f"win{i}.lgt", _softmax(rng, 3, 4, 4)) for i in range(6)]

    c["feat0"] = _tensor(root / "feat0.lgt", rng.normal(size=(5, 2, 2)), normalized=False)
    c["feat1"] = _tensor(root / "feat1.lgt", rng.normal(size=(5, 2, 2)), normalized=False)
    c["labels"] = root / "patch_classes.txt"
    c["labels"].write_text("0 1 2 0\n0 1 2 1\n")
    c["feat_gt0"] = _mask(root / "fgt0.pgm", np.kron(np.array([[0, 1], [2, 0]]), np.ones((2, 2), dtype=int)))
    c["feat_gt1"] = _mask(root / "fgt1.pgm", np.kron(np.array([[0, 1], [2, 1]]), np.ones((2, 2), dtype=int)))
    return c


def invocations(c: dict, out: Path) -> dict[str, list[str]]:
    """One representative argv per subcommand, writing under ``out``."""
    s = str
    return {
        "remap": ["remap", s(c["remap_dir"]), "--table", s(c["table"]), "--out", s(out / "remapped")],
        "filter": ["filter", "--threshold", "0.8", s(c["filter_dir"]), "-o", s(out / "manifest.tsv")],
        "eval": ["eval", "--classes", "4", "--pred", s(c["pred_dir"]), "--gt", s(c["gt_dir"]), "-o", s(out / "eval.txt")],
        "ensemble": ["ensemble", "--tau", "0.4", s(c["p1"]), s(c["p2"]), "-o", s(out / "ens.lgt")],
        "vote": ["vote", *map(s, c["votes"]), "-o", s(out / "vote.pgm")],
        "argmax": ["argmax", s(c["p1"]), "-o", s(out / "argmax.pgm")],
        "tta-merge": ["tta-merge", "--plan", c["plan"], *map(s, c["windows"]), "-o", s(out / "tta.lgt")],
        "flip-merge": ["flip-merge", s(c["p1"]), s(c["p2"]), "-o", s(out / "flip.lgt")],
        "gradcheck": ["gradcheck", "--seed", "0", "--instances", "3"],
        "nce-eval": ["nce-eval", s(c["feat0"]), s(c["feat1"]), "--labels", s(c["labels"]), "--seed", "1", "--negatives", "2"],
        "train-toy": ["train-toy", "--seed", "3", "--steps", "15", "--json", "-o", s(out / "toy.json")],
    }
