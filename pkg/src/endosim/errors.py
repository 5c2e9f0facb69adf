"""Exception types raised across the package."""


class EndosimError(Exception):
    """Base class for all package errors."""


class DomainError(EndosimError, ValueError):
    """An argument lies outside the domain of the operation."""


class BehindCameraError(DomainError):
    pass


class SingularityError(DomainError):
    pass


class EmptyFrameError(EndosimError):
    """The camera sees no geometry (e.g. it sits outside the lumen)."""


class DegenerateFieldError(DomainError):
    """A field has (near) zero variance where a correlation is required."""


class ConcentrationTooHighError(EndosimError):
    pass


class TrackingLostError(EndosimError):
    """The previous-frame mask is empty, so no box can be propagated."""


class AmbiguityError(DomainError):
    pass


class DatasetError(EndosimError):
    """Missing, malformed, or corrupted dataset files."""
