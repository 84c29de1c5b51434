"""Exception types raised across the package."""


class SafeRouteError(Exception):
    """Base class for all package errors."""


class InsufficientDataError(SafeRouteError, ValueError):
    pass


class InvalidGeometryError(SafeRouteError, ValueError):
    """Raised when a leader/follower gap is not strictly positive."""


class NoSegmentError(SafeRouteError, LookupError):
    pass


class LabelUnavailableError(SafeRouteError):
    """The timeline does not cover the requested prediction horizon."""


class DegenerateLandmarkError(SafeRouteError, ValueError):
    pass


class DegenerateCalibrationError(SafeRouteError, ValueError):
    pass


class NotReadyError(SafeRouteError):
    """Indicator history is not yet available for this track."""


class InsufficientMinorityError(SafeRouteError, ValueError):
    pass


class DegenerateLabelsError(SafeRouteError, ValueError):
    pass


class SchemaError(SafeRouteError, ValueError):
    pass


class DomainError(SafeRouteError, ValueError):
    pass


class ConfigError(SafeRouteError, ValueError):
    pass
