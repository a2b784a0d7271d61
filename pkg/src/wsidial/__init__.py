"""Whole-slide image segmentation with interactive correction loops and
slide-level mutation prediction.

The pipeline has two stages: pixel-wise cancer segmentation of pyramidal
slides (trained through iterative correct-and-finetune rounds bootstrapped
from a pretrained model), and a downstream patch-based classifier that
aggregates patch scores into a per-slide mutation probability.
"""

__version__ = "0.1.0"

from wsidial.errors import (
    DegenerateInputError,
    FormatError,
    InvariantError,
    MetricUndefinedError,
    SpecError,
    UnsupportedMagnificationError,
)

__all__ = [
    "DegenerateInputError",
    "FormatError",
    "InvariantError",
    "MetricUndefinedError",
    "SpecError",
    "UnsupportedMagnificationError",
    "__version__",
]
