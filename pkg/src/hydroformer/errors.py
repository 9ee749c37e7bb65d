"""Shared exception classes."""


class ShapeError(ValueError):
    """Tensor shapes incompatible with the requested operation."""


class NumericError(FloatingPointError):
    """A non-finite value appeared where only finite values are allowed."""


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class ConfigError(ValueError):
    """Invalid or unknown configuration."""
