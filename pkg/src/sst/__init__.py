"""Sparse spatiotemporal attention for video object segmentation."""

from sst.patterns import Coord3, PatternSpec
from sst.tensor import read_tensor, softmax_rows, write_tensor

__all__ = ["Coord3", "PatternSpec", "read_tensor", "softmax_rows", "write_tensor"]
__version__ = "0.1.0"
