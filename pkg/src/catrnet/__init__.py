"""Estimation of conditional average treatment responses for continuous
treatments with network spillovers, using control functions against
endogeneity, plus a seeded simulation harness."""

from ._accel import BACKEND
from .basis import CenteredBasis, TensorBasisSpec, penalty_matrix, tensor_eval
from .cqr import (
    ControlVariables,
    CqrFit,
    QuantileGrid,
    check_loss,
    control_variables,
    fit_cqr,
)
from .data import (
    Dataset,
    Network,
    SubsampleSpec,
    build_knn_network,
    build_ring_network,
    homogeneous_subsample,
    load_dataset,
    load_edgelist_network,
    peer_average,
    spillover,
)
from .kernel_stage import (
    Bandwidths,
    CatrEstimate,
    KernelSpec,
    catr_estimate,
    kernel_moments,
    local_linear_beta,
    optimal_bandwidths,
)
from .pipeline import StageConfig, Stages, bandwidth_table, catr_over_grid, run_stages
from .quadrature import QuadratureRule, make_quadrature
from .series import (
    GLambdaFit,
    SeriesFit,
    fit_series,
    recover_g,
    recover_lambda,
)
from .simulation import (
    DgpConfig,
    DgpDraw,
    EvalSpec,
    McReport,
    Scenario,
    compute_c_lambda,
    draw_dgp,
    eval_dgp_function,
    run_monte_carlo,
    true_catr,
)
from .splines import SplineSpec, eval_basis, gram_matrix

__version__ = "0.1.0"
