"""Discretized semilinear elliptic operators and their singularity certificates."""

from .domain import (
    Domain,
    GridFunction,
    DiscreteLaplacian,
    apply_F,
    apply_jacobian,
    build_laplacian,
    free_eigenpairs,
    inner_product,
)
from .nonlinearity import (
    HypothesisReport,
    Nonlinearity,
    check_hypotheses,
    construct_poly_clamped,
    construct_sigmoid_bump,
    construct_wiggle,
    find_almost_critical,
    find_inflection,
    make_nonlinearity,
)
from .spectral import (
    EigenPair,
    FunctionalValues,
    Lambda_map,
    delta,
    eigenpair,
    functional_values,
    grad_delta,
    grad_lambda,
    lambda_phi,
    solve_w,
    tau,
)
from .fibers import (
    FiberPoint,
    FiberTrace,
    fiber_critical_points,
    fiber_solve,
    height,
    height_components,
    project_z,
    trace_fiber,
)
from .sectors import (
    NonfoldCandidate,
    SectorPotential,
    balance_theta,
    balanced_two_valued,
    endpoint_lambda,
    find_nonfold_Hk,
    find_positive_delta_nonfold,
    find_regular_nonfold,
    make_sector_potential,
    sector_coverage,
    sector_indicator,
)
from .mollify import MollifyResult, restore_lambda_zero, restore_nonfold, smooth
from .singularity import (
    PreimageCertificate,
    SingularityCertificate,
    classify_critical_point,
    cusp_certificate,
    detect_collapsing_fiber,
    four_preimage_certificate,
    newton_preimages,
    three_preimage_certificate,
)

__version__ = "0.1.0"
