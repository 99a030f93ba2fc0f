"""Exception hierarchy.

Everything raised on purpose by this package derives from :class:`SavesError`,
so callers (and the CLI) can separate data problems from programming errors.
"""


class SavesError(Exception):
    """Base class for all structured errors."""


class FormatError(SavesError):
    """A file could not be parsed or written in the requested format."""


class ManifestError(FormatError):
    """The frame manifest is inconsistent or references missing files."""


class EvaluationError(SavesError):
    """An evaluation could not produce a result from the given data."""


class ConfigError(SavesError):
    """A configuration value is missing or out of range."""
