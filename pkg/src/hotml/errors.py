"""Exception types raised across the package."""


class HotmlError(Exception):
    """Base class for all package errors."""


class InvalidCorrelationError(HotmlError, ValueError):
    pass


class InvalidDimensionError(HotmlError, ValueError):
    pass


class InvalidInstanceError(HotmlError, ValueError):
    pass


class DimensionMismatchError(HotmlError, ValueError):
    pass


class OracleTooLargeError(HotmlError, ValueError):
    """Brute-force oracle refused because the search space is too large."""


class NumericalError(HotmlError, FloatingPointError):
    """A NaN appeared in an iterate."""


class DivergenceError(HotmlError, RuntimeError):
    """Training loss became non-finite."""


class ParamFileError(HotmlError, ValueError):
    """Bad magic, unsupported version or truncated parameter file."""


class ConfigError(HotmlError, ValueError):
    pass
