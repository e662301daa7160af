"""Randomized trace estimation with Hutchinson, Hutch++ and frozen-basis Hutch++.

The estimators only touch an operator through matrix-vector products.  The
frozen variant reuses one sketch basis across several steps of a
time-varying operator family, which is how trace integrals along an ODE
trajectory are estimated cheaply.
"""

from .errors import ContractError, MatrixMarketError, SearchFailure
from .estimators import (
    EstimateReport,
    approx_hutchpp,
    deflated_batch,
    deflated_hutchinson,
    exact,
    hutchinson,
    hutchinson_batch,
    hutchpp,
    hutchpp_batch,
    hutchpp_budget,
    relative_error,
)
from .harness import (
    BoundCheck,
    ComplexityCurve,
    EstimatorSpec,
    IntegralSpec,
    MomentSummary,
    check_bound,
    check_low_rank_tail,
    check_range_finder,
    default_slack,
    run_trials,
    sample_complexity_sweep,
)
from .linop import (
    DenseOperator,
    LinearOperator,
    SpectrumSpec,
    exact_trace,
    load_matrix_market,
    make_dense,
    make_spectral,
    random_orthogonal,
    random_symmetric,
    write_matrix_market,
)
from .probes import GAUSSIAN, RADEMACHER, ProbeKind, ProbeMatrix, draw_probes
from .sketch import SketchBasis, project_complement, range_find, split_trace_exact
from .trajectory import (
    FrozenSchedule,
    IntegralEstimateReport,
    OperatorTrajectory,
    cost_profile,
    estimate_log_density_delta,
    estimate_trace_integral,
    estimate_trace_integral_batch,
    left_endpoint_exact,
    make_affine_trajectory,
    make_constant_trajectory,
    traceless_direction,
    trajectory_from_snapshots,
)

__version__ = "0.1.0"
