"""Exception types raised across the package."""


class HDTEError(Exception):
    """Base class for all package errors."""


class DataError(HDTEError):
    """Bad input data: malformed CSV rows, missing values, non-binary d/z."""


class ConfigError(HDTEError):
    """Invalid run or dictionary configuration."""


class ConvergenceError(HDTEError):
    """A solver stopped before meeting its optimality certificate."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (last KKT residual {residual:.3e})")
        self.residual = residual


class UnboundedProblemError(HDTEError):
    """The penalized likelihood has no finite minimizer."""


class WeakInstrumentError(HDTEError):
    """A ratio functional has a first-stage denominator too close to zero."""

    def __init__(self, denominator, tol, what="first-stage"):
        super().__init__(f"{what} denominator {denominator!r} is within {tol:g} of zero")
        self.denominator = denominator
        self.tol = tol


class MissingNuisanceError(HDTEError):
    """A reduced-form cell was requested without a fitted or declared nuisance."""
