"""Exception hierarchy shared by every module."""


class WiorError(Exception):
    """Base class for all package errors."""


class CorruptStateError(WiorError, ValueError):
    """A vector that must be finite contains NaN or Inf."""


class InvalidDatasetError(WiorError, ValueError):
    pass


class EpochTooLongError(WiorError, ValueError):
    pass


class AlignmentError(WiorError, ValueError):
    """Permutation order length is not a multiple of the dataset size."""


class NoConvergenceError(WiorError, RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class IllConditioningError(WiorError, RuntimeError):
    pass


class UnsupportedProblemError(WiorError, TypeError):
    pass


class DivergenceError(WiorError, RuntimeError):
    """Raised when an iterate leaves the finite/bounded region.

    ``trace`` holds the records logged before the failure.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ConfigError(WiorError, ValueError):
    pass
