"""Orthogonal-moment estimation of treatment effects with l1-penalized nuisance fits."""

from ._backend import BACKEND
from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    HDTEError,
    MissingNuisanceError,
    UnboundedProblemError,
    WeakInstrumentError,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfigError",
    "ConvergenceError",
    "DataError",
    "HDTEError",
    "MissingNuisanceError",
    "UnboundedProblemError",
    "WeakInstrumentError",
    "__version__",
]
