class TernkitError(Exception):
    """Base class for all errors raised by ternkit."""


class CorruptDataError(TernkitError, ValueError):
    """Packed ternary data contains the reserved 0b10 pattern or dirty padding."""


class DimensionError(TernkitError, ValueError):
    pass


class ModelFormatError(TernkitError):
    """A TQ2F file could not be decoded."""


class BadMagicError(ModelFormatError):
    pass


class UnsupportedVersionError(ModelFormatError):
    pass


class TruncatedFileError(ModelFormatError):
    pass
