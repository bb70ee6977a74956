"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4. ShapeError is a ConfigError because shape violations
always trace back to an invalid configuration or malformed input.
"""


class DacnetError(Exception):
    """Base class for all package errors."""


class ConfigError(DacnetError):
    """Invalid configuration or incompatible parameterization."""


class ShapeError(ConfigError):
    """Tensor shape violates an operation's contract."""


class DataError(DacnetError):
    """Problem with external data: files, manifests, formats."""


class NumericError(DacnetError):
    """Non-finite values or other numeric failures during computation."""
