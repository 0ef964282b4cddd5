"""Exception hierarchy shared across the package."""


class CocoError(Exception):
    """Base class for all errors raised by this package."""


class DataError(CocoError, ValueError):
    """Malformed or unusable input data (files, panels, cross sections)."""


class NumericalError(CocoError, ArithmeticError):
    """A numerical routine failed (non-PSD kernel, non-finite value, ...)."""


class ProjectionError(NumericalError):
    """Dykstra projection hit its iteration cap.

    The last Frobenius change between successive iterates is kept on
    ``residual`` so callers can judge how far off the iterate was.
    """

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
