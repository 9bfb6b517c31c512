"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific one that applies.
"""


class VCBartError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(VCBartError):
    """Invalid hyperparameters, malformed config files, or bad CLI usage."""


class DataError(VCBartError):
    """Malformed, inconsistent, or unusable input data."""


class NumericalError(VCBartError):
    """Non-finite values or failed numerical routines during sampling."""


class ArchiveError(ConfigError):
    """Draw archive is corrupt, truncated, or from an incompatible schema."""
