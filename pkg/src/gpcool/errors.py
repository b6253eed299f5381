"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes (config 2, data 3, numerics 4).
"""


class GpcoolError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(GpcoolError):
    """Invalid or inconsistent run configuration."""


class DataError(GpcoolError):
    """Malformed or unusable input data."""


class NumericalError(GpcoolError):
    """A numerical procedure failed beyond recovery (e.g. Cholesky breakdown)."""
