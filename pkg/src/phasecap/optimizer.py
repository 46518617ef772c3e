"""Per-phase hosting-capacity programs over a convex inner approximation.

Assembles and solves, for one extracted phase, the convex program that
maximizes (or minimizes) weighted nodal DER injections subject to the
proxy-variable branch-flow system:

    V+ = V0^2 1 + M_p p_net + M_q q_net - H l-
    V- = V0^2 1 + M_p p_net + M_q q_net - H l+
    P+ = C p_net + D_R l+        P- = C p_net + D_R l-
    Q+ = C q_net + D_X l+        Q- = C q_net + D_X l-
    l- = f_aff(proxy deviations)
    l+ >= f_quad(proxy deviations)
    vmin^2 <= V-,  V+ <= vmax^2,  l+ <= l_max
    (p_net, q_net) inside the per-node apparent-power circle

where p_net = p - p_load adds the DER decision on top of the fixed base
load. Upper (lower) proxies bound every physical trajectory from above
(below), so any feasible point is guaranteed feasible for the true
nonlinear branch-flow equations of the same single-phase model.

The f_quad envelope is encoded with one auxiliary scalar per branch:
two linear constraints for the absolute linear term and eight convex
quadratic constraints for the proxy-corner forms, using the exact PSD
factorization of the expansion Hessian. Any conic solver exposed through
cvxpy that handles linear and second-order-cone constraints qualifies;
solutions are re-verified against the numeric envelopes independently of
the solver.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass
from typing import Any

import cvxpy as cp
import numpy as np
import scipy.sparse as sparse

from .errors import (
    DimensionMismatch,
    Infeasible,
    InvalidConfig,
    MixedStatus,
    SolverError,
)
from .feeder import SinglePhaseFeeder
from .lindistflow import (
    SensitivityMatrices,
    TaylorPoint,
    eval_f_aff,
    eval_f_quad,
    proxy_corners,
    quad_form,
)

DIRECTIONS = ("up", "down")
Q_MODES = ("fixed_at_base", "free_within_cone")

DEFAULT_SOLVER = "CLARABEL"
_TIGHT_CLARABEL = {
    "tol_gap_abs": 1e-10,
    "tol_gap_rel": 1e-10,
    "tol_feas": 1e-10,
    "max_iter": 10000,
}

# conic reformulations of the quadratic envelope are satisfied only up to
# the solver's residual scale, which follows the largest rows of the whole
# problem rather than each row's own magnitude; tightening the assembled
# envelope by these margins keeps delivered solutions strictly inside it
# (tightening an inner approximation preserves its guarantee)
_MARGIN_ABS = 1e-5
_MARGIN_REL = 1e-5


@dataclass(frozen=True)
class CiaConfig:
    """Configuration of one hosting-capacity solve.

    Voltage limits are magnitudes in pu (scalars or per-node arrays) and are
    squared exactly when the problem is assembled. ``l_max`` caps squared
    branch currents (pu^2); ``None`` leaves currents unconstrained, matching
    feeders whose ratings are unknown. ``s_max_mva`` overrides the feeder
    file's per-node per-phase apparent-power caps when given.
    """

    v_min: float | np.ndarray = 0.95
    v_max: float | np.ndarray = 1.05
    l_max: float | np.ndarray | None = None
    weights: np.ndarray | None = None
    s_max_mva: float | np.ndarray | None = None
    q_mode: str = "fixed_at_base"
    direction: str = "up"
    check_tol: float = 1e-8

    def validate(self, n: int | None = None):
        if self.q_mode not in Q_MODES:
            raise InvalidConfig(f"q_mode must be one of {Q_MODES}")
        if self.direction not in DIRECTIONS:
            raise InvalidConfig(f"direction must be one of {DIRECTIONS}")
        v_min = np.asarray(self.v_min, dtype=float)
        v_max = np.asarray(self.v_max, dtype=float)
        if np.any(v_min <= 0) or np.any(v_min >= v_max):
            raise InvalidConfig("need 0 < v_min < v_max elementwise")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0) or not np.any(w > 0):
                raise InvalidConfig("weights must be >= 0 with at least one > 0")
            if n is not None and w.shape not in ((), (n,)):
                raise DimensionMismatch(f"weights must be scalar or ({n},)")
        for name in ("v_min", "v_max", "l_max"):
            val = getattr(self, name)
            if val is None or np.isscalar(val):
                continue
            if n is not None and np.asarray(val).shape != (n,):
                raise DimensionMismatch(f"{name} must be scalar or ({n},)")


def current_cap_from_base(tp: TaylorPoint, factor: float = 3.0) -> np.ndarray:
    """Per-branch squared-current cap at ``factor`` times the base case."""
    return factor * np.maximum(tp.l0, 1e-6)


@dataclass
class CiaProblem:
    """Assembled convex program plus handles for re-solving and verifying."""

    problem: cp.Problem
    sp: SinglePhaseFeeder
    sm: SensitivityMatrices
    tp: TaylorPoint
    cfg: CiaConfig
    vars: dict
    params: dict
    structure: dict

    def set_voltage_bounds(self, v_min_mag, v_max_mag):
        """Update the per-node magnitude bounds without reassembly."""
        n = self.sp.n_branches
        self.params["vmin_sq"].value = np.broadcast_to(
            np.asarray(v_min_mag, dtype=float) ** 2, (n,)
        ).copy()
        self.params["vmax_sq"].value = np.broadcast_to(
            np.asarray(v_max_mag, dtype=float) ** 2, (n,)
        ).copy()


@dataclass(frozen=True)
class CiaSolution:
    """Optimal injections of one per-phase solve."""

    status: str
    direction: str
    p_pu: np.ndarray | None
    q_pu: np.ndarray | None
    proxies: dict
    hc_total_mw: float
    s_base_phase_mva: float
    solve_stats: dict

    @property
    def p_mw(self) -> np.ndarray | None:
        if self.p_pu is None:
            return None
        return self.p_pu * self.s_base_phase_mva

    @property
    def q_mvar(self) -> np.ndarray | None:
        if self.q_pu is None:
            return None
        return self.q_pu * self.s_base_phase_mva

    def require_optimal(self) -> "CiaSolution":
        if self.status == "infeasible":
            raise Infeasible("hosting-capacity program is infeasible")
        if self.status != "optimal":
            raise SolverError(f"solver ended with status {self.status!r}")
        return self


def _effective_s_max(sp: SinglePhaseFeeder, cfg: CiaConfig) -> np.ndarray | None:
    """Per-node apparent-power caps in pu; None when nothing is capped."""
    n = sp.n_branches
    if cfg.s_max_mva is not None:
        s = np.broadcast_to(
            np.asarray(cfg.s_max_mva, dtype=float) / sp.s_base_phase_mva, (n,)
        ).astype(float)
        return s
    if sp.s_max is not None:
        return np.asarray(sp.s_max, dtype=float)
    return None


def assemble_problem(
    sp: SinglePhaseFeeder,
    sm: SensitivityMatrices,
    tp: TaylorPoint,
    cfg: CiaConfig,
) -> CiaProblem:
    """Build the convex hosting-capacity program for one phase.

    Raises ``DimensionMismatch`` when the matrices or expansion point do not
    match the feeder and ``InvalidConfig`` for inconsistent configuration.
    """
    n = sp.n_branches
    if sm.m_p.shape != (n, n) or len(tp.l0) != n:
        raise DimensionMismatch(
            f"feeder has {n} branches; matrices {sm.m_p.shape}, "
            f"expansion point {len(tp.l0)}"
        )
    cfg.validate(n)

    w = np.ones(n) if cfg.weights is None else np.broadcast_to(
        np.asarray(cfg.weights, dtype=float), (n,)
    )
    s_max = _effective_s_max(sp, cfg)
    if cfg.q_mode == "free_within_cone":
        if s_max is None or np.any(~np.isfinite(s_max)):
            raise InvalidConfig(
                "free_within_cone needs a finite apparent-power cap everywhere"
            )

    p = cp.Variable(n, name="p")
    q = cp.Variable(n, name="q") if cfg.q_mode == "free_within_cone" else None
    vp = cp.Variable(n, name="v_plus")
    vm = cp.Variable(n, name="v_minus")
    pp = cp.Variable(n, name="p_plus")
    pm = cp.Variable(n, name="p_minus")
    qp = cp.Variable(n, name="q_plus")
    qm = cp.Variable(n, name="q_minus")
    lp = cp.Variable(n, name="l_plus")
    lm = cp.Variable(n, name="l_minus")
    t = cp.Variable(n, name="t")

    vmin_sq = cp.Parameter(n, name="vmin_sq")
    vmax_sq = cp.Parameter(n, name="vmax_sq")
    vmin_sq.value = np.broadcast_to(np.asarray(cfg.v_min, float) ** 2, (n,)).copy()
    vmax_sq.value = np.broadcast_to(np.asarray(cfg.v_max, float) ** 2, (n,)).copy()

    p_net = p - sp.p_load
    q_net = (q - sp.q_load) if q is not None else -sp.q_load

    # the proxy-propagation equalities are encoded in their recursive
    # branch-flow form, which is sparse (a handful of nonzeros per row);
    # eliminating the recursion yields exactly the dense closed-form maps
    # that verify_solution recomputes, so the two stay cross-checked
    pe = sp.parent_edge
    rows = np.flatnonzero(pe >= 0)
    sel = sparse.csr_matrix(
        (np.ones(len(rows)), (rows, pe[rows])), shape=(n, n)
    )
    root_v0 = np.where(pe < 0, sm.v0_sq, 0.0)
    # child-sum: accumulate child-branch flows into the parent branch
    child_sum = sel.T.tocsr()
    r_vec, x_vec = sp.r, sp.x
    z2 = r_vec**2 + x_vec**2

    dv_p = sel @ vp + root_v0 - tp.v0
    dv_m = sel @ vm + root_v0 - tp.v0
    d_plus = [pp - tp.p0, qp - tp.q0, dv_p]
    d_minus = [pm - tp.p0, qm - tp.q0, dv_m]

    f_aff = (
        tp.l0
        + sum(cp.multiply(tp.j_pos[:, k], d_minus[k]) for k in range(3))
        + sum(cp.multiply(tp.j_neg[:, k], d_plus[k]) for k in range(3))
    )
    vp_parent = sel @ vp + root_v0
    vm_parent = sel @ vm + root_v0
    constraints = [
        pp == child_sum @ pp - p_net + cp.multiply(r_vec, lp),
        pm == child_sum @ pm - p_net + cp.multiply(r_vec, lm),
        qp == child_sum @ qp - q_net + cp.multiply(x_vec, lp),
        qm == child_sum @ qm - q_net + cp.multiply(x_vec, lm),
        vp == vp_parent - 2 * (cp.multiply(r_vec, pm) + cp.multiply(x_vec, qm))
        + cp.multiply(z2, lm),
        vm == vm_parent - 2 * (cp.multiply(r_vec, pp) + cp.multiply(x_vec, qp))
        + cp.multiply(z2, lp),
        lm == f_aff,
    ]
    lin = sum(cp.multiply(tp.j_pos[:, k], d_plus[k]) for k in range(3)) + sum(
        cp.multiply(tp.j_neg[:, k], d_minus[k]) for k in range(3)
    )
    constraints += [t >= 2 * lin + _MARGIN_ABS, t >= -2 * lin + _MARGIN_ABS]
    n_quad = 0
    for selector in _corner_selectors():
        dp_k = d_plus[0] if selector[0] == 0 else d_minus[0]
        dq_k = d_plus[1] if selector[1] == 0 else d_minus[1]
        dv_k = d_plus[2] if selector[2] == 0 else d_minus[2]
        u1 = dp_k - cp.multiply(tp.c1, dv_k)
        u2 = dq_k - cp.multiply(tp.c2, dv_k)
        constraints.append(
            t * (1.0 - _MARGIN_REL)
            >= cp.multiply(tp.g, cp.square(u1) + cp.square(u2)) + _MARGIN_ABS
        )
        n_quad += 1
    constraints.append(lp >= tp.l0 + t)

    n_bounds = 2
    constraints += [vm >= vmin_sq, vp <= vmax_sq]
    if cfg.l_max is not None:
        l_cap = np.broadcast_to(np.asarray(cfg.l_max, dtype=float), (n,))
        constraints.append(lp <= l_cap)
        n_bounds += 1

    constraints.append(p >= 0 if cfg.direction == "up" else p <= 0)

    n_cone = 0
    if s_max is not None:
        finite = np.isfinite(s_max)
        if cfg.q_mode == "free_within_cone":
            constraints.append(
                cp.square(p - sp.p_load) + cp.square(q - sp.q_load)
                <= s_max**2
            )
            n_cone = 1
        elif np.any(finite):
            cap_sq = s_max[finite] ** 2 - sp.q_load[finite] ** 2
            if np.any(cap_sq < 0):
                raise InvalidConfig(
                    "apparent-power cap below the base reactive load"
                )
            cap = np.sqrt(cap_sq)
            p_net_f = p[np.flatnonzero(finite)] - sp.p_load[finite]
            constraints += [p_net_f <= cap, p_net_f >= -cap]
            n_cone = 1

    objective = cp.sum(cp.multiply(w, p))
    problem = cp.Problem(
        cp.Maximize(objective) if cfg.direction == "up" else cp.Minimize(objective),
        constraints,
    )
    structure = {
        "n_branches": n,
        "decision_scalars": n * (2 if q is not None else 1),
        "proxy_scalars": 8 * n,
        "aux_scalars": n,
        "abs_linear_constraints": 2,
        "quadratic_constraints": n_quad,
        "bound_constraints": n_bounds,
        "cone_constraints": n_cone,
    }
    return CiaProblem(
        problem=problem,
        sp=sp,
        sm=sm,
        tp=tp,
        cfg=cfg,
        vars={
            "p": p, "q": q, "v_plus": vp, "v_minus": vm, "p_plus": pp,
            "p_minus": pm, "q_plus": qp, "q_minus": qm, "l_plus": lp,
            "l_minus": lm, "t": t,
        },
        params={"vmin_sq": vmin_sq, "vmax_sq": vmax_sq},
        structure=structure,
    )


def _corner_selectors():
    from itertools import product

    return product((0, 1), repeat=3)


def verify_solution(prob: CiaProblem, tol: float | None = None) -> float:
    """Largest scaled constraint residual recomputed outside the solver.

    Residuals are measured relative to the constraint's own magnitude,
    ``|lhs - rhs| / (1 + |rhs|)``, and use the numeric envelope evaluators
    rather than the cvxpy expressions, so an encoding bug in the assembled
    program cannot self-certify.
    """
    sp, sm, tp, cfg = prob.sp, prob.sm, prob.tp, prob.cfg
    v = {k: (var.value if var is not None else None) for k, var in prob.vars.items()}
    p = v["p"]
    q = v["q"]
    p_net = p - sp.p_load
    q_net = (q - sp.q_load) if q is not None else -sp.q_load

    pe = sp.parent_edge
    v0sq = sm.v0_sq
    vp_send = np.where(pe >= 0, v["v_plus"][np.maximum(pe, 0)], v0sq)
    vm_send = np.where(pe >= 0, v["v_minus"][np.maximum(pe, 0)], v0sq)
    d_plus = np.stack([v["p_plus"] - tp.p0, v["q_plus"] - tp.q0, vp_send - tp.v0], axis=1)
    d_minus = np.stack([v["p_minus"] - tp.p0, v["q_minus"] - tp.q0, vm_send - tp.v0], axis=1)

    def eq(lhs, rhs):
        return float(np.max(np.abs(lhs - rhs) / (1.0 + np.abs(rhs))))

    def le(lhs, rhs):
        return float(np.max((lhs - rhs) / (1.0 + np.abs(rhs)), initial=0.0))

    base = v0sq + sm.m_p @ p_net + sm.m_q @ q_net
    res = [
        eq(v["v_plus"], base - sm.h @ v["l_minus"]),
        eq(v["v_minus"], base - sm.h @ v["l_plus"]),
        eq(v["p_plus"], sm.c @ p_net + sm.d_r @ v["l_plus"]),
        eq(v["p_minus"], sm.c @ p_net + sm.d_r @ v["l_minus"]),
        eq(v["q_plus"], sm.c @ q_net + sm.d_x @ v["l_plus"]),
        eq(v["q_minus"], sm.c @ q_net + sm.d_x @ v["l_minus"]),
        eq(v["l_minus"], eval_f_aff(tp, d_plus, d_minus)),
        le(eval_f_quad(tp, d_plus, d_minus), v["l_plus"]),
        le(prob.params["vmin_sq"].value, v["v_minus"]),
        le(v["v_plus"], prob.params["vmax_sq"].value),
    ]
    if cfg.l_max is not None:
        l_cap = np.broadcast_to(np.asarray(cfg.l_max, float), (sp.n_branches,))
        res.append(le(v["l_plus"], l_cap))
    res.append(le(-p, 0.0) if cfg.direction == "up" else le(p, 0.0))
    s_max = _effective_s_max(sp, cfg)
    if s_max is not None:
        finite = np.isfinite(s_max)
        if q is not None:
            res.append(
                le(np.sqrt(p_net**2 + q_net**2)[finite], s_max[finite])
            )
        elif np.any(finite):
            cap = np.sqrt(s_max[finite] ** 2 - sp.q_load[finite] ** 2)
            res.append(le(np.abs(p_net[finite]), cap))
    worst = float(max(res))
    if tol is not None and worst > tol:
        raise SolverError(f"solution violates constraints by {worst:.2e}")
    return worst


def solve_hc_direction(
    prob: CiaProblem,
    solver: str = DEFAULT_SOLVER,
    **solver_opts: Any,
) -> CiaSolution:
    """Solve the assembled program and independently verify the result.

    Returns a ``CiaSolution`` whose status is ``optimal``, ``infeasible`` or
    ``solver_error``; callers that require optimality can chain
    ``.require_optimal()``. Verified constraint residuals above the
    configured tolerance trigger one tighter re-solve before giving up.
    """
    opts = dict(_TIGHT_CLARABEL) if solver.upper() == "CLARABEL" else {}
    opts.update(solver_opts)
    started = time.perf_counter()

    def _attempt(extra):
        merged = dict(opts)
        merged.update(extra)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                prob.problem.solve(solver=solver, **merged)
        except cp.error.SolverError as exc:
            raise SolverError(str(exc)) from None
        return prob.problem.status

    def _failure(kind, status):
        return CiaSolution(
            status=kind,
            direction=prob.cfg.direction,
            p_pu=None,
            q_pu=None,
            proxies={},
            hc_total_mw=float("nan"),
            s_base_phase_mva=prob.sp.s_base_phase_mva,
            solve_stats={
                "time_sec": time.perf_counter() - started,
                "solver": solver,
                "raw_status": str(status),
            },
        )

    # the independent verification below is the acceptance gate; the
    # solver's own status only decides whether retrying makes sense
    status = _attempt({})
    if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return _failure("infeasible", status)
    if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        return _failure("solver_error", status)
    residual = verify_solution(prob)
    if residual > prob.cfg.check_tol:
        retry = {"max_iter": 100_000} if solver.upper() == "CLARABEL" else {}
        status = _attempt(retry)
        if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            return _failure("infeasible", status)
        if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            return _failure("solver_error", status)
        residual = verify_solution(prob)
        if residual > prob.cfg.check_tol:
            raise SolverError(
                f"constraint residual {residual:.2e} exceeds "
                f"{prob.cfg.check_tol:.1e} after re-solve"
            )
    elapsed = time.perf_counter() - started

    p_val = prob.vars["p"].value.copy()
    q_val = (
        prob.vars["q"].value.copy() if prob.vars["q"] is not None
        else np.zeros_like(p_val)
    )
    proxies = {
        name: prob.vars[name].value.copy()
        for name in ("v_plus", "v_minus", "p_plus", "p_minus",
                     "q_plus", "q_minus", "l_plus", "l_minus", "t")
    }
    stats = {
        "time_sec": elapsed,
        "solver": solver,
        "max_residual": residual,
    }
    if prob.problem.solver_stats is not None:
        stats["iterations"] = prob.problem.solver_stats.num_iters
    return CiaSolution(
        status="optimal",
        direction=prob.cfg.direction,
        p_pu=p_val,
        q_pu=q_val,
        proxies=proxies,
        hc_total_mw=float(p_val.sum() * prob.sp.s_base_phase_mva),
        s_base_phase_mva=prob.sp.s_base_phase_mva,
        solve_stats=stats,
    )


def hosting_capacity(
    solutions: list[CiaSolution], replicate_single_phase: bool = False
) -> float:
    """Aggregate per-phase solutions into a feeder hosting capacity (MW).

    With ``replicate_single_phase`` a single solution is applied to all
    three phases (3x its total); otherwise per-phase totals are summed.

    Raises ``MixedStatus`` unless every solution is optimal.
    """
    if not solutions:
        raise MixedStatus("no solutions to aggregate")
    bad = [s.status for s in solutions if s.status != "optimal"]
    if bad:
        raise MixedStatus(f"non-optimal solutions present: {bad}")
    if replicate_single_phase:
        if len(solutions) != 1:
            raise MixedStatus("replication aggregates exactly one solution")
        return 3.0 * solutions[0].hc_total_mw
    return float(sum(s.hc_total_mw for s in solutions))
