"""Exception hierarchy shared across the package."""
from __future__ import annotations


class GravicellError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(GravicellError):
    """Invalid configuration: unknown key, bad type, or out-of-range value."""


class ParameterError(GravicellError, ValueError):
    """A function argument violates its documented precondition."""


class DataError(GravicellError):
    """Input data cannot be used: missing files, empty sequence, bad content."""


class FormatError(DataError):
    """An image file exists but its format violates what the reader supports.

    The message names the offending property (bit depth, channel count,
    magic number, ...) so callers can surface a useful diagnostic.
    """
