"""Exception types shared across the package."""


class ScgebdError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ScgebdError):
    """Tensor dimensions disagree with what an operation requires."""


class ConfigError(ScgebdError):
    """A configuration value violates a documented constraint."""


class UsageError(ScgebdError):
    """An API was called in a way its contract forbids."""


class InputError(ScgebdError):
    """Input data (files, annotations, sequences) failed validation."""


class InternalError(ScgebdError):
    """An internal consistency check failed; indicates a bug."""


class NumericError(ScgebdError):
    """A numeric failure at runtime, e.g. divergence to non-finite loss."""
