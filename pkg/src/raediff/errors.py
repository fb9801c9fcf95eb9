"""Exception hierarchy shared by every raediff module."""


class RaeDiffError(Exception):
    """Base class for all raediff errors."""


class ShapeError(RaeDiffError, ValueError):
    """Tensors that must share a shape do not."""


class TimestepError(RaeDiffError, ValueError):
    """A timestep lies outside the schedule."""


class FormatError(RaeDiffError):
    """A file on disk could not be parsed."""


class BadMagicError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class DimensionMismatchError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class ManifestError(FormatError):
    """Manifest fails schema validation or references missing files."""


class DigestMismatchError(RaeDiffError):
    """Trigger file does not match the digest recorded in a manifest."""


class NumericalError(RaeDiffError, ArithmeticError):
    """A computation produced non-finite values."""
