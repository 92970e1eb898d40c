"""Exception types shared across the package."""


class AttrSwapError(Exception):
    """Base class for package errors."""


class ConfigError(AttrSwapError):
    """Invalid configuration or CLI usage. Mapped to exit code 2."""


class DataError(AttrSwapError):
    """Malformed dataset input (annotation files, image archives)."""


class NumericsError(AttrSwapError):
    """Non-finite loss values or failed matrix routines. Mapped to exit code 3."""
