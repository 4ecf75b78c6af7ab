"""Binary interchange formats: 8-bit PGM (P5) masks and LGT float tensors.

LGT layout (all little-endian)::

    b"LGT1" | u32 C | u32 H | u32 W | u8 normalized | C*H*W f32 in (c, y, x) order
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IGNORE = 255
LGT_MAGIC = b"LGT1"
_LGT_HEADER = struct.Struct("<4sIIIB")
_U32_MAX = 2**32 - 1
_WHITESPACE = b" \t\n\r\v\f"


class FormatError(ValueError):
    """Malformed mask or tensor byte stream."""


@dataclass(frozen=True, eq=False)
class SegMask:
    """Per-pixel class ids, shape (height, width), 255 = ignore."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels)
        if labels.ndim != 2:
            raise ValueError(f"mask labels must be 2-D, got shape {labels.shape}")
        if labels.dtype != np.uint8:
            if labels.size and (labels.min() < 0 or labels.max() > 255):
                raise ValueError("mask labels must lie in 0..255")
            labels = labels.astype(np.uint8)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @classmethod
    def from_list(cls, rows) -> "SegMask":
        return cls(np.asarray(rows, dtype=np.int64))

    def __eq__(self, other):
        if not isinstance(other, SegMask):
            return NotImplemented
        return self.labels.shape == other.labels.shape and np.array_equal(self.labels, other.labels)

    def __repr__(self):
        return f"SegMask({self.width}x{self.height})"


@dataclass(frozen=True, eq=False)
class ProbMap:
    """C x H x W float32 tensor; ``normalized`` marks per-pixel probability vectors.

    The same container carries raw logits or feature maps with ``normalized=False``.
    """

    values: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        if values.ndim != 3:
            raise ValueError(f"tensor values must be C x H x W, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("tensor contains non-finite values")
        if self.normalized and values.size:
            if values.min() < 0:
                raise ValueError("normalized tensor contains negative values")
            sums = values.sum(axis=0, dtype=np.float64)
            if np.abs(sums - 1.0).max() > 1e-4:
                raise ValueError("normalized tensor has a pixel whose sum deviates from 1 by > 1e-4")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "normalized", bool(self.normalized))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, ProbMap):
            return NotImplemented
        return (
            self.normalized == other.normalized
            and self.values.shape == other.values.shape
            and self.values.tobytes() == other.values.tobytes()
        )

    def __repr__(self):
        c, h, w = self.shape
        return f"ProbMap(C={c}, H={h}, W={w}, normalized={self.normalized})"


def _skip_space_and_comments(data: bytes, pos: int) -> int:
    while pos < len(data):
        ch = data[pos : pos + 1]
        if ch == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch in _WHITESPACE:
            pos += 1
        else:
            break
    return pos


def _read_int_token(data: bytes, pos: int, what: str) -> tuple[int, int]:
    start = pos
    while pos < len(data) and 48 <= data[pos] <= 57:
        pos += 1
    if pos == start:
        raise FormatError(f"expected {what} at byte offset {start}")
    if pos - start > 10:
        raise FormatError(f"{what} too large at byte offset {start}")
    return int(data[start:pos]), pos


def read_mask(data: bytes) -> SegMask:
    """Parse a binary PGM with maxval 255 into a SegMask."""
    data = bytes(data)
    if data[:2] != b"P5":
        raise FormatError("bad magic at byte offset 0: expected b'P5'")
    pos = 2
    fields = []
    for what in ("width", "height", "maxval"):
        if pos >= len(data) or data[pos : pos + 1] not in _WHITESPACE:
            raise FormatError(f"expected whitespace before {what} at byte offset {pos}")
        pos = _skip_space_and_comments(data, pos)
        value, pos = _read_int_token(data, pos, what)
        fields.append(value)
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"maxval must be 255, got {maxval}")
    if width > _U32_MAX or height > _U32_MAX:
        raise FormatError("mask dimensions exceed u32")
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or data[pos : pos + 1] not in _WHITESPACE:
        raise FormatError(f"expected single whitespace after maxval at byte offset {pos}")
    pos += 1
    n = width * height
    payload = data[pos:]
    if len(payload) < n:
        raise FormatError(
            f"truncated payload: expected {n} bytes from offset {pos}, data ends at offset {len(data)}"
        )
    if len(payload) > n:
        raise FormatError(f"trailing bytes after payload at byte offset {pos + n}")
    labels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return SegMask(labels.copy())


def write_mask(mask: SegMask) -> bytes:
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    return header + mask.labels.tobytes()


def read_tensor(data: bytes) -> ProbMap:
    """Parse an LGT byte stream."""
    data = bytes(data)
    if len(data) < _LGT_HEADER.size:
        raise FormatError(f"truncated header: {len(data)} bytes, need {_LGT_HEADER.size}")
    magic, c, h, w, flag = _LGT_HEADER.unpack_from(data, 0)
    if magic != LGT_MAGIC:
        raise FormatError(f"bad magic {magic!r} at byte offset 0")
    if flag not in (0, 1):
        raise FormatError(f"normalized flag must be 0 or 1 at byte offset 16, got {flag}")
    expected = c * h * w * 4
    payload = data[_LGT_HEADER.size :]
    if len(payload) != expected:
        raise FormatError(
            f"size mismatch: header declares {c}x{h}x{w} = {c * h * w} floats "
            f"({expected} bytes), payload has {len(payload)} bytes"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(c, h, w)
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values.ravel()))[0])
        raise FormatError(f"non-finite value at byte offset {_LGT_HEADER.size + 4 * bad}")
    try:
        return ProbMap(values.astype(np.float32), normalized=bool(flag))
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def write_tensor(p: ProbMap) -> bytes:
    c, h, w = p.shape
    header = _LGT_HEADER.pack(LGT_MAGIC, c, h, w, 1 if p.normalized else 0)
    return header + p.values.astype("<f4").tobytes()


def load_mask(path) -> SegMask:
    return read_mask(Path(path).read_bytes())


def load_tensor(path) -> ProbMap:
    return read_tensor(Path(path).read_bytes())


def atomic_write(path, data: bytes) -> None:
    """Write via a sibling temp file and rename, so readers never see partial output."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
