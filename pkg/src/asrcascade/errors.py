"""Exception types shared across the package."""


class CascadeError(Exception):
    """Base class for all errors raised by this package."""


class ManifestError(CascadeError):
    """A manifest line could not be parsed or violates the record schema."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class CorpusValidationError(CascadeError):
    """A loaded corpus violates a structural invariant (duplicate ids, empty reference...)."""


class CapabilityError(CascadeError):
    """A record lacks an artifact (features, score, accent...) required by an operation."""


class FileFormatError(CascadeError):
    """Base class for binary tensor/model file problems."""


class BadMagicError(FileFormatError):
    """File does not start with the expected magic bytes or version."""


class TruncatedFileError(FileFormatError):
    """File ends before the payload declared by its header."""


class NonFiniteValueError(FileFormatError):
    """A binary payload contains NaN or infinite values."""


class ShapeMismatchError(CascadeError):
    """Tensor or parameter shapes are inconsistent with the configuration."""
