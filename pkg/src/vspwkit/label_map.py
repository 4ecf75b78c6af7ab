"""Remapping masks between label taxonomies and filtering by valid-pixel ratio."""
from __future__ import annotations

import enum
from fractions import Fraction

import numpy as np

from .tensor_io import IGNORE, SegMask

MAX_CLASS_ID = 254


class MappingError(ValueError):
    pass


class MissingPolicy(enum.Enum):
    ERROR = "error"
    TO_IGNORE = "ignore"


class MappingTable(dict):
    """source id -> target id, with ``IGNORE`` (255) standing for a dropped class."""

    def lookup_array(self) -> tuple[np.ndarray, np.ndarray]:
        """(lut, known) over all 256 byte values; 255 always maps to itself."""
        lut = np.full(256, IGNORE, dtype=np.uint8)
        known = np.zeros(256, dtype=bool)
        for src, dst in self.items():
            lut[src] = dst
            known[src] = True
        known[IGNORE] = True
        return lut, known


def _parse_id(token: str, lineno: int, what: str) -> int:
    try:
        value = int(token, 10)
    except ValueError:
        raise MappingError(f"line {lineno}: {what} {token!r} is not an integer") from None
    if not 0 <= value <= MAX_CLASS_ID:
        raise MappingError(f"line {lineno}: {what} {value} outside 0..{MAX_CLASS_ID}")
    return value


def parse_mapping(text: str) -> MappingTable:
    """Parse ``src<TAB>dst`` lines; ``dst`` may be ``-`` for ignore."""
    table = MappingTable()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = raw.rstrip("\r\n").split("\t")
        if len(parts) != 2:
            raise MappingError(f"line {lineno}: expected 'src<TAB>dst', got {raw!r}")
        src = _parse_id(parts[0].strip(), lineno, "source id")
        dst_tok = parts[1].strip()
        dst = IGNORE if dst_tok == "-" else _parse_id(dst_tok, lineno, "target id")
        if src in table:
            raise MappingError(f"line {lineno}: duplicate source id {src}")
        table[src] = dst
    return table


def remap(mask: SegMask, table: MappingTable, missing_policy: MissingPolicy = MissingPolicy.ERROR) -> SegMask:
    lut, known = table.lookup_array()
    flat = mask.labels.ravel()
    if missing_policy is MissingPolicy.ERROR:
        unknown = ~known[flat]
        if unknown.any():
            idx = int(np.flatnonzero(unknown)[0])
            raise MappingError(f"unmapped source id {int(flat[idx])} at pixel index {idx}")
    return SegMask(lut[mask.labels])


def valid_fraction(mask: SegMask) -> Fraction:
    """Exact (non-ignore pixels) / (all pixels)."""
    area = mask.width * mask.height
    if area == 0:
        raise MappingError("valid ratio undefined for a zero-area mask")
    valid = int(np.count_nonzero(mask.labels != IGNORE))
    return Fraction(valid, area)


def valid_ratio(mask: SegMask) -> float:
    frac = valid_fraction(mask)
    return frac.numerator / frac.denominator


def filter_decision(mask: SegMask, threshold: float = 0.8, strict: bool = False) -> bool:
    """True = keep. Inclusive (>=) unless ``strict``."""
    if not 0.0 <= threshold <= 1.0:
        raise MappingError(f"threshold {threshold} outside [0, 1]")
    # float compare: 4/5 must equal the literal 0.8, which Fraction(0.8) does not
    ratio = valid_ratio(mask)
    return ratio > threshold if strict else ratio >= threshold
