from typing import Optional


class OccReidError(Exception):
    """
    Base class for every error raised by the pipeline.
    The CLI maps ValidationFailure subclasses to exit code 1 and everything else to 2.
    """


class ValidationFailure(OccReidError, ValueError):
    """Input, configuration or data that fails validation before any work starts."""


class DimensionError(ValidationFailure):
    """
    Shape mismatch between operands.

    Attributes:
        axis: name of the offending axis (e.g. "channel", "height").
        expected: the size the operation required.
        actual: the size it received.
    """

    def __init__(self, op: str, axis: str, expected, actual):
        self.op = op
        self.axis = axis
        self.expected = expected
        self.actual = actual
        super().__init__(f"{op}: {axis} mismatch (expected {expected}, got {actual})")


class NonFiniteError(OccReidError, ArithmeticError):
    """A forward operation produced NaN or Inf."""

    def __init__(self, op: str):
        self.op = op
        super().__init__(f"{op}: produced non-finite values")


class ConfigurationError(ValidationFailure):
    pass


class FrameFormatError(ValidationFailure):
    """Malformed or truncated PPM/PGM file."""

    def __init__(self, message: str, offset: int, path: Optional[str] = None):
        self.offset = offset
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (at byte {offset})")


class CheckpointFormatError(ValidationFailure):
    """Malformed, truncated, foreign or wrong-version checkpoint file."""


class CheckpointKindError(CheckpointFormatError):
    def __init__(self, expected: str, actual: str):
        self.expected = expected
        self.actual = actual
        super().__init__(f"checkpoint holds a '{actual}' model, expected '{expected}'")


class CheckpointVersionError(CheckpointFormatError):
    pass


class ManifestError(ValidationFailure):
    pass


class DatasetError(ValidationFailure):
    pass


class MissingCheckpointError(OccReidError):
    pass
