"""Majorize-minimize memory gradient (3MG) optimization for image restoration
with smooth l2-l0 and convex edge-preserving penalties."""

from .errors import (ConfigurationError, DimensionError, PGMError, SolverError,
                     UnsupportedOperation)
from .fidelities import make_fidelity
from .objective import CompositeObjective, PenaltyGroup
from .operators import ImageGrid, LinearOperator, make_operator, stack
from .potentials import Potential
from .solvers import SolverConfig, SolveResult, solve, solve_3mg

__version__ = "0.1.0"

__all__ = [
    "CompositeObjective",
    "ConfigurationError",
    "DimensionError",
    "ImageGrid",
    "LinearOperator",
    "PenaltyGroup",
    "PGMError",
    "Potential",
    "SolveResult",
    "SolverConfig",
    "SolverError",
    "UnsupportedOperation",
    "make_fidelity",
    "make_operator",
    "solve",
    "solve_3mg",
    "stack",
]
