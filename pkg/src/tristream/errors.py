"""Exception types shared across the pipeline."""


class TristreamError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(TristreamError):
    """Invalid configuration value or malformed configuration file."""


class DataError(TristreamError):
    """Input data violates a contract (bad dimensions, missing files, ...)."""


class FormatError(DataError):
    """A binary artifact file is malformed, truncated, or inconsistent."""
