"""Exception types shared across the package."""


class PowConvError(Exception):
    """Base class for all package errors."""


class DimensionError(PowConvError, ValueError):
    """Array shapes do not agree with what an operation requires."""


class ConfigurationError(PowConvError, ValueError):
    """A parameter or configuration value is out of its valid range."""


class DataError(PowConvError, ValueError):
    """Input data is malformed or unusable (bad labels, empty sets, ...)."""
