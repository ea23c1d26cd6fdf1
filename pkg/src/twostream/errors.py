"""Exception taxonomy. Every error the library raises deliberately derives
from TwoStreamError so callers can catch the whole family at once."""


class TwoStreamError(Exception):
    """Base class for all library errors."""


class ShapeError(TwoStreamError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(TwoStreamError, FloatingPointError):
    """A tensor acquired NaN/Inf values, or an input was non-finite."""


class ConfigError(TwoStreamError, ValueError):
    """A configuration value violates its contract."""


class MaskError(TwoStreamError, ValueError):
    """An attention mask leaves at least one query row with no keys."""


class LabelError(TwoStreamError, ValueError):
    """A class label lies outside [0, num_classes)."""


class DataError(TwoStreamError, ValueError):
    """A dataset file or record violates the documented schema."""


class ConsistencyError(TwoStreamError, ValueError):
    """Parameter names/shapes disagree between two collections."""


class DivergenceError(TwoStreamError, ArithmeticError):
    """Training produced a non-finite loss.  Carries the offending batch."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class UnreliableCheckError(TwoStreamError, RuntimeError):
    """A finite-difference check was requested on a non-deterministic function."""


class CheckpointError(TwoStreamError, ValueError):
    """A checkpoint file is malformed or does not match the model."""
