"""Numerical verification of Hellmann-Feynman identities for degenerate spectra."""

from .checks import (
    ResidualReport,
    check_diagonal_hft,
    check_hypervirial,
    check_offdiag_hft,
    check_sum_rule,
    check_unitary_mix,
)
from .dsl import (
    ModelDefinition,
    ModelError,
    ModelSyntaxError,
    differentiate,
    evaluate,
    evaluate_derivative,
    evaluate_matrix,
    parse_model,
)
from .ensemble import (
    TraceComparison,
    free_energy,
    free_energy_derivative,
    lemma1_trace,
    observable_trace_derivative,
    trace_weighted_derivative,
)
from .models import builtin_model
from .oracle import FDConfig, adapted_basis, fd_branch_slopes, fd_eigenvector_derivative, fd_scalar
from .scan import lambda_grid, scan_degeneracies
from .spectral import (
    MatrixFunctionSpec,
    SpectralDecomposition,
    align_continuation,
    cluster_degeneracies,
    eigendecompose,
    matrix_function,
    rotate_within_clusters,
)

__version__ = "0.1.0"
