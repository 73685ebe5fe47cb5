"""Exception types raised across the toolkit."""


class RegiBenchError(Exception):
    """Base class for all toolkit errors."""


class InvalidChannelError(RegiBenchError, ValueError):
    pass


class InvalidParameterError(RegiBenchError, ValueError):
    pass


class SingularTransformError(RegiBenchError, ValueError):
    pass


class DegenerateOverlapError(RegiBenchError):
    pass


class RegistrationFailedError(RegiBenchError):
    """Optimizer could not evaluate its cost; ``last_params`` holds the last valid vector."""

    def __init__(self, message, last_params=None):
        super().__init__(message)
        self.last_params = last_params


class NoFeaturesError(RegiBenchError):
    pass


class InsufficientMatchesError(RegiBenchError):
    pass


class DegenerateGeometryError(RegiBenchError):
    pass


class NumericFailureError(RegiBenchError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])
