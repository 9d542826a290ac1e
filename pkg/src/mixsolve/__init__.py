"""Maximum-likelihood estimation of mixture proportions.

mix-SQP with a truncated pivoted-QR approximation of the likelihood matrix,
an active-set quadratic subproblem solver, and EM / projected-gradient
baselines.
"""

from .baselines import FirstOrderConfig, em_step, mixem, mixpgd, project_simplex
from .lowrank import LowRankFactor, rrqr
from .objective import LikelihoodOperator, dual_residual, eval_derivatives, eval_objective
from .problem import (
    InvalidInputError,
    LikelihoodMatrix,
    ObservationSet,
    VarianceGrid,
    build_likelihood_matrix,
    read_observations,
    select_grid,
    validate,
)
from .qp import QpSubproblem, solve_qp
from .simulate import SimulationSpec, simulate_observations
from .sqp import SolverResult, SqpConfig, TraceRecord, mixsqp, normalize_solution

__version__ = "0.1.0"

__all__ = [
    "FirstOrderConfig", "InvalidInputError", "LikelihoodMatrix", "LikelihoodOperator",
    "LowRankFactor", "ObservationSet", "QpSubproblem", "SimulationSpec", "SolverResult",
    "SqpConfig", "TraceRecord", "VarianceGrid", "build_likelihood_matrix", "dual_residual",
    "em_step", "eval_derivatives", "eval_objective", "mixem", "mixpgd", "mixsqp",
    "normalize_solution", "project_simplex", "read_observations", "rrqr", "select_grid",
    "simulate_observations", "solve_qp", "validate",
]
