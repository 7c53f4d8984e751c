"""Exception types shared across the package."""


class KacsimError(Exception):
    """Base class for all package errors."""


class ZeroVector(KacsimError):
    """A geometric operation received a zero relative velocity."""


class DomainError(KacsimError):
    """A parameter is outside its mathematical domain."""


class FileError(KacsimError):
    """A referenced input file could not be read."""


class SizeMismatch(KacsimError):
    """Two point clouds that must have equal size do not."""


class TooLarge(KacsimError):
    """Instance exceeds the size limit of an exhaustive algorithm."""


class MissingCertificate(KacsimError):
    """A transport plan lacks the dual potentials needed for verification."""


class PlanMismatch(KacsimError):
    """A transport plan does not match the ensembles it is applied to."""


class MissingLpNorm(KacsimError):
    """The requested bound needs an L^p norm that was not supplied."""


class ParseError(KacsimError):
    """Config text could not be parsed.  Carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = "line %d: %s" % (line, message)
        super().__init__(message)
        self.line = line


class ValidationError(KacsimError):
    """A parsed config value violates a documented precondition."""


class IoError(KacsimError):
    """An output artifact could not be written."""
