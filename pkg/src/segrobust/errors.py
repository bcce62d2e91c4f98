"""Exception hierarchy shared across the package.

Exit-code mapping for the CLI: UsageError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class SegRobustError(Exception):
    """Base class for all package errors."""


class UsageError(SegRobustError):
    """Caller passed inconsistent shapes, labels, or options."""


class DataError(SegRobustError):
    """Malformed or missing on-disk data."""


class NumericalError(SegRobustError):
    """Numerical failure (divergence, non-finite values)."""
