"""Losses, aggregation, TTA merging and mIoU evaluation for video semantic segmentation."""

__version__ = "0.1.0"

from .tensor_io import IGNORE, FormatError, ProbMap, SegMask  # noqa: E402

__all__ = ["IGNORE", "FormatError", "ProbMap", "SegMask", "__version__"]
