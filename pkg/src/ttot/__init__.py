"""Tensor-train tensor-on-tensor regression.

Iterative hard thresholding and Riemannian gradient descent for recovering a
low-TT-rank coefficient tensor from tensor covariates and tensor responses,
with spectral initialisation, the measurement operator and its adjoint, and
error metrics that account for the TT gauge freedom.
"""

from .metrics import check_distance_sandwich, factor_distance_sq, recovery_error_sq
from .solvers import (
    DivergenceError,
    IhtConfig,
    RgdConfig,
    ScaleMode,
    SolverTrace,
    iht_gradient,
    iht_run,
    polar_retract,
    rgd_factor_gradients,
    rgd_run,
    spectral_init,
    stiefel_project,
)
from .tot_model import NoiseSpec, RipEstimate, TotProblem, adjoint_map, estimate_rip, forward_map, generate_problem, loss
from .tt_core import (
    ContractionSpec,
    TTSpectrum,
    TTTensor,
    contract,
    left_fold,
    left_orthogonalize,
    left_unfold,
    random_tt_unit,
    restricted_frobenius_norm,
    tt_spectrum,
    tt_svd,
    tt_to_dense,
    unfold,
)

__version__ = "0.1.0"
