"""
Exception hierarchy for nmsparse.

Argument problems subclass ``ValueError`` so callers that only catch
``ValueError`` keep working.
"""


class NMSparseError(Exception):
    """Base class for all nmsparse errors."""


class ShapeError(NMSparseError, ValueError):
    """Dimension mismatch or empty input."""


class PatternError(NMSparseError, ValueError):
    """Invalid pattern shape, index set, rank or mask."""


class ConfigError(NMSparseError, ValueError):
    """Invalid pipeline configuration."""


class NumericalError(NMSparseError, ArithmeticError):
    """Non-finite loss or values during optimization."""


class FormatError(NMSparseError, ValueError):
    """Malformed DWT1/NMS1 file."""


class TruncatedStreamError(FormatError):
    """A stream ended before the header said it would."""


class InvalidRankError(FormatError):
    """A stored pattern rank is outside [0, C(M, N))."""


class HeaderMismatchError(FormatError):
    """Magic, version or stream sizes disagree with the header."""
