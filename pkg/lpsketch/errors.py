"""
Exception hierarchy for lpsketch
"""

from typing import Optional


class LpSketchError(Exception):
    """Base class for all errors raised by lpsketch"""


class ParameterError(LpSketchError, ValueError):
    """A parameter is out of range or the derived constants are unusable"""


class DimensionMismatchError(LpSketchError, ValueError):
    """Two vectors (or a vector and a dataset) disagree on dimension"""

    def __init__(self, expected: int, actual: int):
        super().__init__(f"Dimension mismatch: expected {expected}, got {actual}")
        self.expected = expected
        self.actual = actual


class EmptyDatasetError(LpSketchError, ValueError):
    """An operation that needs at least one point received none"""


class LineageMismatchError(LpSketchError, ValueError):
    """Sketches were built with different params, seeds or medians"""


class SerializationError(LpSketchError, ValueError):
    """Serialized bytes are truncated or carry an unknown magic/version"""


class DatasetFormatError(LpSketchError, ValueError):
    """A dataset file line could not be parsed"""

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ConfigError(LpSketchError, ValueError):
    """An experiment configuration is invalid"""
