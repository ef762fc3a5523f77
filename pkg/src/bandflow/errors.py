"""Exception types shared across the package."""


class BandflowError(Exception):
    """Base class for all package errors."""


class DimensionError(BandflowError):
    """Shape or length mismatch between operands."""


class ConfigError(BandflowError):
    """Invalid configuration value (kernel width, temperature, ...)."""


class NumericError(BandflowError):
    """Non-finite value where a finite one is required."""


class BoundsError(BandflowError):
    """Index outside its valid range."""


class BoundaryError(BandflowError):
    """Phoneme boundaries do not partition the frame axis."""


class DataError(BandflowError):
    """Invalid data value (non-positive duration, empty expansion, ...)."""


class StateError(BandflowError):
    """Operation invalid in the current state (e.g. double backward)."""
