"""Guaranteed-feasible DER hosting capacity for unbalanced radial feeders.

The package decomposes a three-phase feeder into per-phase convex programs
built on a restriction of the branch-flow equations, solves for the maximum
(and minimum) nodal injections, and certifies every result against an exact
nonlinear three-phase load flow.
"""

from .errors import (
    ArgumentError,
    DimensionMismatch,
    Infeasible,
    InvalidConfig,
    MissingPhase,
    MixedStatus,
    NonConvergence,
    NonTransposed,
    PhasecapError,
    SchemaError,
    SingularBase,
    SolverError,
    TopologyError,
    UnitError,
)
from .feeder import (
    Branch,
    Bus,
    Feeder,
    Phase,
    SinglePhaseFeeder,
    apply_scenario,
    balance_approximation,
    extract_phase,
    feeder_allclose,
    generate_synthetic_feeder,
    parse_feeder,
    serialize_feeder,
)
from .lindistflow import (
    SensitivityMatrices,
    TaylorPoint,
    build_sensitivity_matrices,
    build_taylor_point,
    eval_f_aff,
    eval_f_quad,
)
from .loadflow import (
    LoadFlowResult,
    estimate_phase_voltages,
    solve_single_phase,
    solve_three_phase,
)
from .methods import (
    HcReport,
    MethodId,
    ViolationMetrics,
    compute_metrics,
    run,
    run_iterative,
    run_method,
    run_modz,
    run_random_search,
    run_scenario_suite,
    validate_injections,
)
from .optimizer import (
    CiaConfig,
    CiaProblem,
    CiaSolution,
    assemble_problem,
    hosting_capacity,
    solve_hc_direction,
    verify_solution,
)

__version__ = "0.1.0"
