"""Exception hierarchy shared by all pipeline stages."""


class DistmatchError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DistmatchError):
    """Invalid parameter, option, or configuration file."""


class DataError(DistmatchError):
    """Malformed or inconsistent input data (file, line, and column where known)."""


class EmptyCohortError(DistmatchError):
    """No participants survived the inclusion filters; downstream stages cannot run."""
