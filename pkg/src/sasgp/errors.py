"""Exception types shared across the package."""


class SasGpError(Exception):
    """Base class for all package-specific errors."""


class NotPositiveDefinite(SasGpError):
    """Cholesky factorization hit a non-positive pivot (after jitter)."""


class DimensionMismatch(SasGpError):
    """Operand shapes do not chain."""


class CapExceeded(SasGpError):
    """An exhaustive enumeration was requested beyond its configured cap."""


class NonFiniteGradient(SasGpError):
    """A gradient buffer contains NaN or Inf at optimizer-step time."""


class DataError(SasGpError):
    """Base class for dataset ingestion failures."""


class BadMagic(DataError):
    """IDX file magic number does not match the expected record type."""


class TruncatedFile(DataError):
    """IDX payload is shorter than its header declares."""


class ShapeMismatch(DataError):
    """Image and label files disagree, or declared dims are inconsistent."""


class ParseError(DataError):
    """CSV row could not be parsed; message carries the line number."""
