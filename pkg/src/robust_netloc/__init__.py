"""Robust range-based sensor network localization with a convexified Huber loss."""

from .cost import CostEval, Residuals, eval_convex, eval_nonconvex, gradient_check, residuals
from .loss import LossValue, absolute, convexified, hinge, huber, loss, quadratic
from .model import (
    LossSpec,
    Measurements,
    Network,
    ProblemInstance,
    ValidationReport,
    degree_stats,
    stack,
    unstack,
    validate,
)
from .simulate import (
    ExperimentConfig,
    MonteCarloReport,
    NoiseModel,
    generate_network,
    load_canonical,
    positioning_error,
    run_monte_carlo,
    run_trial,
    sample_measurements,
    sweep_huber_parameter,
)
from .solver import SolveResult, SolverConfig, SolverError, backtracking_step, initialize, minimize

__version__ = "0.1.0"
