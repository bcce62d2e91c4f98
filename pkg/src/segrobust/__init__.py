"""Semantic-segmentation heads with implicit background estimation,
a desk-scale trainable model, a 15-corruption robustness benchmark,
and representation-structure diagnostics."""

__version__ = "0.1.0"

from .errors import DataError, NumericalError, SegRobustError, UsageError
from .heads import HeadKind, LogitMap

__all__ = [
    "DataError",
    "HeadKind",
    "LogitMap",
    "NumericalError",
    "SegRobustError",
    "UsageError",
    "__version__",
]
