"""Exception types shared across the package."""


class UdseError(Exception):
    """Base class for all package errors."""


class ParseError(UdseError):
    """Malformed file content. Carries the byte offset of the first bad byte."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedFormat(UdseError):
    """Well-formed container, but a codec or layout we do not handle."""


class ConfigError(UdseError):
    """Invalid configuration value or inconsistent setup."""


class RangeError(UdseError):
    """Token or index outside its declared range."""


class DegenerateInput(UdseError):
    """Input is valid in type but unusable (zero power, empty reference, ...)."""


class IoError(UdseError):
    """Filesystem failure surfaced from a read or write."""
