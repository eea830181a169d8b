"""Exception types shared across the package."""


class RefgameError(Exception):
    """Base class for all package errors."""


class DimensionError(RefgameError):
    """Tensor shapes are incompatible with the requested operation."""


class ConfigError(RefgameError):
    """A configuration value is missing, unknown, or out of range."""


class DataError(RefgameError):
    """Invalid input data (duplicate ids, empty record sets, ...)."""


class DivergenceError(RefgameError):
    """Training produced a non-finite loss."""
