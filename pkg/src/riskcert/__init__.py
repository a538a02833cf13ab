"""Certified risk bounds for affine and quadratic estimates of functionals
from observations drawn from simple families of distributions."""

from .errors import ConvergenceError, DimensionError, DomainError
from .saddle_solver import SolverConfig, SolveReport

__version__ = "0.1.0"

__all__ = ["ConvergenceError", "DimensionError", "DomainError", "SolverConfig", "SolveReport", "__version__"]
