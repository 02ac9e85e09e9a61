"""Exception types shared across the package.

Each maps to a CLI exit code: config problems exit 1, bad data exits 2,
numeric failures exit 3.
"""


class ConfigError(ValueError):
    exit_code = 1


class DataError(ValueError):
    exit_code = 2


class NumericError(ArithmeticError):
    exit_code = 3


class ShapeError(ValueError):
    """Incompatible tensor or raster shapes."""

    exit_code = 1
