"""Variance-trend estimation for gridded spatio-temporal data.

Estimates a smoothly varying log-variance field by minimizing a penalized
Gaussian negative log-likelihood with l1 penalties on temporal second
differences (piecewise-linear in time) and spatial first differences
(piecewise-constant in space).  Two interchangeable large-scale solvers
are provided: consensus ADMM over sub-cubes with interior-point local
solves, and linearized ADMM with closed-form proximal updates.
"""

__version__ = "0.1.0"

from .consensus import SubProblem, partition, solve_consensus
from .dataio import Dataset, DatasetMeta, export_results, ingest
from .errors import (
    ConvergenceError,
    DomainError,
    PowerIterationError,
    StepSizeError,
    ValidationError,
)
from .grid import (
    Field,
    GridSpec,
    SolverConfig,
    SolverResult,
    annual_average_sd,
    flatten_index,
    negative_log_likelihood,
    penalized_objective,
    unflatten_index,
    variance_change_map,
)
from .kernels import (
    ProxParams,
    conjugate_augmented,
    conjugate_single,
    conjugate_single_grad_hess,
    lambert_w,
    lambert_w_exp,
    prox_variance_nll,
    soft_threshold,
)
from .linadmm import choose_stepsizes, solve_linearized
from .operators import (
    PenaltyWeights,
    assemble,
    build_longhorizon,
    build_spatial,
    build_temporal,
    operator_norm,
    penalty_weights,
)
from .pdip import (
    AugmentedConjugateOracle,
    GaussianConjugateOracle,
    PdipConfig,
    PdipResult,
    VarianceConjugateOracle,
    solve_dual,
    solve_single_series,
    solve_subproblem,
)
from .simulate import (
    BenchmarkRecord,
    SimulationOutput,
    Source,
    SyntheticModel,
    default_model,
    generate,
    mae,
    run_benchmark,
    true_variance,
    true_variance_at,
    write_mae_table,
)
from .sweep import SweepRecord, detrend_dataset, sweep
from .trend import TrendFitResult, cross_validate_trend, fit_trend
