"""Oscillation analysis for second-order equations with piecewise constant arguments of generalized type."""

__version__ = "0.1.0"

from .expr import Expression, parse
from .pca import Custom, Uniform
from .model import InitialCondition, ProblemSpec, TailHint, builtin, validate
from .solver import SolverOptions, Trajectory, integrate
from .criteria import CriteriaOptions, check_theorem_1, check_theorem_2, improper_integral
from .oscillation import classify_trajectory, lemma_check

__all__ = [
    "Expression", "parse", "Custom", "Uniform", "InitialCondition", "ProblemSpec", "TailHint",
    "builtin", "validate", "SolverOptions", "Trajectory", "integrate", "CriteriaOptions",
    "check_theorem_1", "check_theorem_2", "improper_integral", "classify_trajectory", "lemma_check",
]
