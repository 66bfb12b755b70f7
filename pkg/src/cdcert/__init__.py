"""Coordinate descent for Lasso/SCAD/MCP penalized least squares, with
per-sweep convergence certificates."""

from .penalty import Family, PenaltySpec
from .problems import SyntheticSpec, generate
from .solver import (
    Problem,
    SolveResult,
    SolverOptions,
    SolveTrace,
    Status,
    lambda_max,
    normalize_columns,
    objective,
    regularization_path,
    solve,
)

__version__ = "0.1.0"

__all__ = [
    "Family",
    "PenaltySpec",
    "Problem",
    "SolveResult",
    "SolverOptions",
    "SolveTrace",
    "Status",
    "SyntheticSpec",
    "generate",
    "lambda_max",
    "normalize_columns",
    "objective",
    "regularization_path",
    "solve",
]
