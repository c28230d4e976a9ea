"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: configuration problems exit 2,
data problems exit 3, numerical failures exit 4.
"""


class GBMixedError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(GBMixedError):
    """Invalid configuration: bad field values, unknown keys, bad usage."""

    exit_code = 2


class DataError(GBMixedError):
    """Invalid or unusable input data."""

    exit_code = 3


class NumericalError(GBMixedError):
    """Numerical failure during fitting or prediction."""

    exit_code = 4


class SingularCovarianceError(NumericalError):
    """A marginal covariance matrix stayed non-positive-definite after jitter."""
