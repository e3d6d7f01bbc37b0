"""Iterative proportional scaling solvers for Poisson log-affine models."""

from .design import (
    DesignError,
    DesignMatrix,
    TableSchema,
    build_raking_design,
    build_table_design,
    expected_column_count,
    read_triplet_csv,
    write_triplet_csv,
)
from .model import (
    Coefficients,
    ModelError,
    ProblemInstance,
    bohning_bound,
    g_squared,
    gradient,
    neg_log_likelihood,
    optimal_intercept,
    pearson_x2,
    reparam_gradient,
    reparam_objective,
    spectral_bound,
)
from .solvers import (
    ConvergenceTrace,
    FitResult,
    SolverConfig,
    SolverError,
    a_ips_fit,
    bips_fit,
    check_stop,
    gis_fit,
    iis_fit,
    ips_fit,
    l1_ips_fit,
    mm_binary_fit,
    mm_general_fit,
    mm_parallel_fit,
    newton_fit,
    qips_fit,
    solve,
    x2_ips_fit,
)

__version__ = "0.1.0"

__all__ = [
    "Coefficients",
    "ConvergenceTrace",
    "DesignError",
    "DesignMatrix",
    "FitResult",
    "ModelError",
    "ProblemInstance",
    "SolverConfig",
    "SolverError",
    "TableSchema",
    "a_ips_fit",
    "bips_fit",
    "bohning_bound",
    "build_raking_design",
    "build_table_design",
    "check_stop",
    "expected_column_count",
    "g_squared",
    "gis_fit",
    "gradient",
    "iis_fit",
    "ips_fit",
    "l1_ips_fit",
    "mm_binary_fit",
    "mm_general_fit",
    "mm_parallel_fit",
    "neg_log_likelihood",
    "newton_fit",
    "optimal_intercept",
    "pearson_x2",
    "qips_fit",
    "read_triplet_csv",
    "reparam_gradient",
    "reparam_objective",
    "solve",
    "spectral_bound",
    "write_triplet_csv",
    "x2_ips_fit",
]
