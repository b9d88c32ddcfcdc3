"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: DataError -> 2, NumericsError -> 3.
"""


class SunShadowError(Exception):
    """Base class for all package errors."""


class DataError(SunShadowError):
    """Malformed, inconsistent, or out-of-range input data."""


class ManifestError(DataError):
    """Sequence manifest cannot be parsed or is internally inconsistent."""


class MissingFileError(DataError):
    """A file named by a manifest or directory layout does not exist."""


class UnreadableFileError(DataError):
    """A file exists but cannot be decoded."""


class DimensionMismatchError(DataError):
    """Image, mask, or volume dimensions disagree."""


class TimestampOrderError(DataError):
    """Frame timestamps are not strictly increasing."""


class NumericsError(SunShadowError):
    """A numerical procedure failed in a way the caller must see."""
