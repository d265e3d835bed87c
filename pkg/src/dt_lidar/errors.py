"""Exception hierarchy shared across the package."""


class DtLidarError(Exception):
    """Base class for all package errors."""


class ValidationError(DtLidarError, ValueError):
    """Invalid configuration or argument values."""


class GeometryError(ValidationError):
    """Malformed or missing geometry."""


class FormatError(ValidationError):
    """A file exists but does not follow its on-disk format."""


class IntegrityError(ValidationError):
    """A dataset manifest disagrees with the files on disk."""

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = list(missing)
