# app/core/errors.py


class GFEFError(Exception):
    """Base class for every error raised by the classifier package."""


class ConfigError(GFEFError, ValueError):
    """Invalid, unknown or inconsistent configuration keys."""


class DatasetFormatError(GFEFError, ValueError):
    """A dataset file could not be parsed or breaks a dataset invariant."""


class ShapeError(GFEFError, ValueError):
    """An array or tensor does not have the shape an operation expects."""


class CheckpointError(GFEFError, ValueError):
    """A checkpoint file is corrupt, from another format version, or mismatched."""


class InputValidationError(GFEFError, ValueError):
    """A series submitted for classification is unusable (length, NaN, Inf)."""
