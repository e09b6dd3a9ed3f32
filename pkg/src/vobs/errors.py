"""Exception hierarchy shared across the workbench.

The CLI maps these onto process exit codes: ConfigError -> 1,
NumericalError -> 2, DataFormatError and OSError -> 3.
"""


class VobsError(Exception):
    """Base class for all workbench errors."""


class ConfigError(VobsError):
    """Invalid configuration, invalid argument values, or contract violations."""


class NumericalError(VobsError):
    """Numerical failure: divergence, non-finite values, singular matrices."""


class DataFormatError(VobsError):
    """Malformed or incompatible on-disk data (CSV, cache, weight files)."""
