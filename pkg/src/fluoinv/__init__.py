"""Reconstruction of an absorption source in a coupled excitation/emission
diffusion model from noisy terminal-time point measurements.

The package provides the structured-grid discretization, the two coupled
forward solvers, the regularized scattered-data fit with self-consistent
choice of the regularization weight, the monotone fixed-point inversion,
Monte-Carlo rate experiments, and eigenvalue diagnostics, plus a CLI
(`fluoinv`) that reproduces the benchmark experiments end to end.
"""

__version__ = "0.1.0"

from .fit import (
    FitConfig,
    FitResult,
    MeasurementSet,
    empirical_norm,
    optimal_lambda_prior,
    point_evaluation,
    self_consistent_lambda,
    solve_data_fit,
)
from .forward import (
    ProblemData,
    SpaceTimeField,
    elliptic_solve,
    solve_emission,
    solve_excitation,
    terminal_data,
    terminal_time_derivative,
)
from .grid import (
    ConvergenceError,
    Grid,
    GridFunction,
    SolveReport,
    SparseOperator,
    assemble_laplacian,
    assemble_mass,
    assemble_stiffness,
    cg_solve,
)
from .inverse import (
    InverseConfig,
    IterationTrace,
    PositivityError,
    check_domain,
    fixed_point_map,
    fixed_point_solve,
    initial_guess,
    noisy_fixed_point_map,
    noisy_fixed_point_solve,
    stability_constants,
)
from .metrics import ErrorBundle, dual_h1_norm, error_bundle, h1_norm, l2_norm
from .spectral import SpectrumReport, empirical_smoothing_spectrum, laplacian_spectrum
from .stochastic import (
    ExperimentRecord,
    InversionPipeline,
    LadderPoint,
    NoiseModel,
    RateFit,
    expectation_experiment,
    fit_rate,
    observe,
    sample_points,
    tail_histogram,
)

__all__ = [name for name in dir() if not name.startswith("_")]
