"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2,
numerical failures exit 3, I/O failures exit 4.
"""


class RadiofieldError(Exception):
    """Base class for all package-specific errors."""


class DomainError(RadiofieldError, ValueError):
    """An operation was called with values outside its domain
    (empty path list, zero-magnitude channel, non-unit direction, ...)."""


class ConfigError(RadiofieldError, ValueError):
    """A configuration object or file is structurally invalid."""


class NumericalError(RadiofieldError, RuntimeError):
    """A computation produced non-finite values or diverged."""


class DataIoError(RadiofieldError, OSError):
    """Reading or writing an on-disk artifact failed or failed validation."""
