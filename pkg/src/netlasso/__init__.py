"""Constrained LASSO over mesh networks: data model, graphs, solvers, diagnostics."""

from .errors import (
    ConstructionFailure,
    ConvergenceFailure,
    DivergenceFailure,
    ExperimentFailure,
    InsufficientData,
    InvalidArgument,
    InvariantViolation,
    NetLassoError,
    PreconditionViolation,
    SearchFailure,
)
from .model import CovarianceSpec, LinearModel, ModelConfig, generate_model, reference_solution
from .network import ChebyshevMixing, MixingMatrix, build_topology, mixing_matrix, power_mixing
from .numerics import L1Ball, project_l1_ball, spectral_norm
from .solvers import (
    RunConfig,
    RunTrace,
    SolverState,
    dgd_run,
    grid_search_gamma,
    netlasso_run,
    pgd_run,
    star_pushpull_run,
)

__version__ = "0.1.0"
