"""Exception hierarchy shared by every module."""


class GavisError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(GavisError, ValueError):
    """An argument is out of range or geometrically invalid."""


class FormatError(GavisError):
    """An input file is structurally wrong (missing property, bad header)."""


class UnsupportedEncodingError(FormatError):
    """The file uses an encoding this reader does not handle (e.g. ASCII PLY)."""


class DataError(GavisError):
    """An input file parses but carries invalid values (NaN, inf)."""


class ParseError(GavisError):
    """Malformed JSON. ``offset`` is the byte offset of the failure."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class VersionError(GavisError):
    """Schema version of a stored artifact does not match this reader."""


class SamplingError(GavisError):
    """Candidate sampling exhausted its rejection budget."""


class InvariantError(GavisError):
    """An internal consistency check failed."""
