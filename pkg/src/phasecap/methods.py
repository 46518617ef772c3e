"""End-to-end hosting-capacity methods and their evaluation metrics.

A method turns a three-phase feeder into one or more single-phase convex
programs, solves both injection directions, applies the resulting nodal
injections to the full three-phase network and scores the outcome:

* ``m1i`` / ``m1ii``     balanced worst-case / averaged approximation,
                         one solve, result replicated to all three phases;
* ``m2i_a/b/c``          one phase extracted and solved, result replicated;
* ``m2ii``               all three phases extracted and solved separately;
* ``modz``               per-phase solves with mutual-subtracted impedances
                         applied selectively to lines near nodes where the
                         per-phase voltage prediction misses the three-phase
                         truth by more than ``epsilon``;
* ``iterative``          per-phase solves with per-node voltage bounds that
                         relax by the estimated mutual-coupling voltage
                         difference each round, stopping before the first
                         three-phase violation;
* ``random_search``      seeded baseline that scales random injection
                         directions to the feasibility boundary.

All validation is done by the exact nonlinear three-phase sweep.
"""

from __future__ import annotations

import io
import time
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from .errors import ArgumentError, Infeasible, NonConvergence
from .feeder import (
    Feeder,
    Phase,
    SinglePhaseFeeder,
    apply_scenario,
    balance_approximation,
    extract_phase,
)
from .lindistflow import build_sensitivity_matrices, build_taylor_point
from .loadflow import (
    LoadFlowResult,
    estimate_phase_voltages,
    solve_single_phase,
    solve_three_phase,
)
from .optimizer import (
    CiaConfig,
    CiaSolution,
    assemble_problem,
    hosting_capacity,
    solve_hc_direction,
)

BASIC_KINDS = ("m1i", "m1ii", "m2i_a", "m2i_b", "m2i_c", "m2ii")
ALL_KINDS = BASIC_KINDS + ("modz", "iterative", "random_search")


@dataclass(frozen=True)
class MethodId:
    """A method selection with its parameters validated up front."""

    kind: str
    epsilon: float | None = None
    alpha: float | None = None
    max_iter: int | None = None
    samples: int | None = None
    seed: int | None = None
    selection_passes: int = 1

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ArgumentError(f"unknown method kind {self.kind!r}")
        if self.kind == "modz":
            if self.epsilon is None or self.epsilon < 0:
                raise ArgumentError("modz needs epsilon >= 0")
            if self.selection_passes < 1:
                raise ArgumentError("modz needs at least one selection pass")
        if self.kind == "iterative":
            if self.alpha is None or not 0.0 <= self.alpha <= 1.0:
                raise ArgumentError("iterative needs 0 <= alpha <= 1")
            if self.max_iter is None or self.max_iter < 1:
                raise ArgumentError("iterative needs max_iter >= 1")
        if self.kind == "random_search":
            if self.samples is None or self.samples < 1:
                raise ArgumentError("random_search needs samples >= 1")
            if self.seed is None:
                raise ArgumentError("random_search needs a seed")

    @property
    def label(self) -> str:
        if self.kind == "modz":
            return f"modz(eps={self.epsilon:g})"
        if self.kind == "iterative":
            return f"iterative(alpha={self.alpha:g}, max_iter={self.max_iter})"
        if self.kind == "random_search":
            return f"random_search(samples={self.samples}, seed={self.seed})"
        return self.kind


@dataclass(frozen=True)
class ViolationMetrics:
    """Voltage-limit violation scores of one validated injection set."""

    n_v: int
    m_v: float
    s_v: float
    w_m: float
    vuf: float

    def as_dict(self) -> dict:
        return {
            "N_v": self.n_v,
            "M_v": self.m_v,
            "S_v": self.s_v,
            "W_M": self.w_m,
            "VUF_percent": self.vuf,
        }


def compute_metrics(
    v_mag: np.ndarray,
    phase_mask: np.ndarray,
    v_min: float = 0.95,
    v_max: float = 1.05,
    tol: float = 0.0,
) -> ViolationMetrics:
    """Score a three-phase voltage magnitude profile against limits.

    ``n_v`` counts node-phase entries outside [v_min, v_max]; ``m_v`` and
    ``s_v`` are the worst and summed violation depths; ``w_m`` averages the
    margin to the nearer limit; ``vuf`` averages, per node, the largest
    upward deviation of a phase magnitude from the node's phase mean, in
    percent. Violations not exceeding ``tol`` are treated as zero.
    """
    v_mag = np.asarray(v_mag, dtype=float)
    mask = np.asarray(phase_mask, dtype=bool)
    over = np.where(mask, v_mag - v_max, 0.0)
    under = np.where(mask, v_min - v_mag, 0.0)
    amount = np.maximum(0.0, np.maximum(over, under))
    amount[amount <= tol] = 0.0
    n_v = int(np.count_nonzero(amount))
    m_v = float(amount.max(initial=0.0))
    s_v = float(amount.sum())

    margins = np.minimum(v_mag - v_min, v_max - v_mag)
    w_m = float(np.where(mask, np.maximum(margins, 0.0), 0.0).sum() / mask.sum())

    vuf_terms = []
    for i in range(v_mag.shape[0]):
        present = mask[i]
        if not present.any():
            continue
        vals = v_mag[i, present]
        mean = vals.mean()
        vuf_terms.append(100.0 * (vals.max() - mean) / mean)
    vuf = float(np.mean(vuf_terms)) if vuf_terms else 0.0
    return ViolationMetrics(n_v=n_v, m_v=m_v, s_v=s_v, w_m=w_m, vuf=vuf)


def validate_injections(
    feeder: Feeder,
    injections: np.ndarray,
    v_min: float = 0.95,
    v_max: float = 1.05,
    tol: float = 0.0,
) -> tuple[LoadFlowResult, ViolationMetrics | None]:
    """Exact three-phase validation of (N, 3) complex per-unit injections."""
    res = solve_three_phase(feeder, injections)
    if not res.converged:
        return res, None
    metrics = compute_metrics(res.v_mag, feeder.phase_mask, v_min, v_max, tol)
    return res, metrics


@dataclass(frozen=True)
class DirectionResult:
    """One direction's outcome inside a report."""

    status: str
    hc_mw: float | None
    p_mw: np.ndarray | None
    q_mvar: np.ndarray | None
    metrics: ViolationMetrics | None
    modified_lines: tuple = ()
    validation_converged: bool | None = None


@dataclass(frozen=True)
class HcReport:
    """Everything one method run produced, in SI units."""

    method: MethodId
    feeder_buses: tuple
    up: DirectionResult
    down: DirectionResult
    iterations: dict = field(default_factory=dict)
    runtime_sec: float = 0.0

    @property
    def hc_up_mw(self):
        return self.up.hc_mw

    @property
    def hc_down_mw(self):
        return self.down.hc_mw

    def to_dict(self) -> dict:
        def direction_dict(d: DirectionResult):
            out = {
                "status": d.status,
                "hc_mw": d.hc_mw,
                "modified_lines": [list(line) for line in d.modified_lines],
                "validation_converged": d.validation_converged,
            }
            if d.metrics is not None:
                out["metrics"] = d.metrics.as_dict()
            if d.p_mw is not None:
                out["p_mw"] = {
                    str(bid): [round(float(v), 9) for v in d.p_mw[k]]
                    for k, bid in enumerate(self.feeder_buses)
                }
                out["q_mvar"] = {
                    str(bid): [round(float(v), 9) for v in d.q_mvar[k]]
                    for k, bid in enumerate(self.feeder_buses)
                }
            return out

        return {
            "method": self.method.label,
            "up": direction_dict(self.up),
            "down": direction_dict(self.down),
            "iterations": dict(self.iterations),
        }


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------


def _solve_phase(sp: SinglePhaseFeeder, cfg: CiaConfig, direction: str) -> CiaSolution:
    sm = build_sensitivity_matrices(sp)
    tp = build_taylor_point(sp)
    prob = assemble_problem(sp, sm, tp, dc_replace(cfg, direction=direction))
    return solve_hc_direction(prob)


def _injection_matrix(
    feeder: Feeder, per_phase: dict, replicate: CiaSolution | None = None
) -> np.ndarray:
    """(N, 3) complex per-unit injections from per-phase solutions."""
    inj = np.zeros((feeder.n_buses, 3), dtype=complex)
    if replicate is not None:
        values = replicate.p_pu + 1j * replicate.q_pu
        for ph in Phase:
            inj[feeder.order, ph] = values
    else:
        for ph, sol in per_phase.items():
            inj[feeder.order, ph] = sol.p_pu + 1j * sol.q_pu
    return inj * feeder.phase_mask


def _scalar_limits(cfg: CiaConfig) -> tuple[float, float]:
    if not (np.isscalar(cfg.v_min) and np.isscalar(cfg.v_max)):
        raise ArgumentError("this method needs scalar voltage limits")
    return float(cfg.v_min), float(cfg.v_max)


def _direction_result(
    feeder: Feeder,
    cfg: CiaConfig,
    solutions: list[CiaSolution],
    replicate: bool,
    modified_lines: tuple = (),
) -> DirectionResult:
    bad = [s.status for s in solutions if s.status != "optimal"]
    if bad:
        status = "infeasible" if "infeasible" in bad else "solver_error"
        return DirectionResult(status, None, None, None, None, modified_lines)
    if replicate:
        inj = _injection_matrix(feeder, {}, replicate=solutions[0])
        hc = hosting_capacity(solutions, replicate_single_phase=True)
    else:
        inj = _injection_matrix(feeder, dict(zip(Phase, solutions)))
        hc = hosting_capacity(solutions)
    v_min, v_max = _scalar_limits(cfg)
    res, metrics = validate_injections(feeder, inj, v_min, v_max)
    s_phase = feeder.s_base_phase_mva
    return DirectionResult(
        status="optimal",
        hc_mw=hc,
        p_mw=inj.real * s_phase,
        q_mvar=inj.imag * s_phase,
        metrics=metrics,
        modified_lines=modified_lines,
        validation_converged=res.converged,
    )


def _require_base_converges(feeder: Feeder):
    base = solve_three_phase(feeder)
    if not base.converged:
        raise NonConvergence("base-case three-phase load flow does not converge",
                             result=base)
    return base


# ---------------------------------------------------------------------------
# methods
# ---------------------------------------------------------------------------


def run_method(
    feeder: Feeder,
    method: MethodId,
    cfg: CiaConfig,
    directions: tuple = ("up", "down"),
) -> HcReport:
    """Run one of the basic decomposition methods (m1*/m2*)."""
    if method.kind not in BASIC_KINDS:
        raise ArgumentError(f"run_method handles {BASIC_KINDS}, not {method.kind}")
    started = time.perf_counter()
    _require_base_converges(feeder)

    if method.kind == "m1i":
        sps = {"balanced": balance_approximation(feeder, "worst_case")}
    elif method.kind == "m1ii":
        sps = {"balanced": balance_approximation(feeder, "average")}
    elif method.kind == "m2ii":
        sps = {ph: extract_phase(feeder, ph, "diagonal") for ph in Phase}
    else:
        ph = Phase[method.kind[-1]]
        sps = {ph: extract_phase(feeder, ph, "diagonal")}
    replicate = method.kind != "m2ii"

    results = {}
    for direction in ("up", "down"):
        if direction not in directions:
            results[direction] = DirectionResult("not_run", None, None, None, None)
            continue
        sols = [_solve_phase(sp, cfg, direction) for sp in sps.values()]
        results[direction] = _direction_result(feeder, cfg, sols, replicate)
    return HcReport(
        method=method,
        feeder_buses=tuple(b.id for b in feeder.buses),
        up=results["up"],
        down=results["down"],
        runtime_sec=time.perf_counter() - started,
    )


def _splice_impedance(
    diag: SinglePhaseFeeder, modified: SinglePhaseFeeder, branch_mask: np.ndarray
) -> SinglePhaseFeeder:
    """Diagonal impedances except where the mask selects the modified ones."""
    return dc_replace(
        diag,
        r=np.where(branch_mask, modified.r, diag.r),
        x=np.where(branch_mask, modified.x, diag.x),
        provenance=diag.provenance + (("modified_branches", int(branch_mask.sum())),),
    )


def run_modz(
    feeder: Feeder,
    epsilon: float,
    cfg: CiaConfig,
    directions: tuple = ("up", "down"),
    selection_passes: int = 1,
) -> HcReport:
    """Selective mutual-subtraction method.

    Per direction: solve all phases with every line's mutual impedance
    subtracted, validate against the three-phase sweep, select the nodes
    where the per-phase voltage prediction misses the three-phase magnitude
    by more than ``epsilon``, then re-solve with only the lines incident to
    selected nodes modified. The re-solve is what the report carries.
    """
    started = time.perf_counter()
    _require_base_converges(feeder)
    method = MethodId(
        kind="modz", epsilon=epsilon, selection_passes=selection_passes
    )
    v_min, v_max = _scalar_limits(cfg)

    sps_diag = {ph: extract_phase(feeder, ph, "diagonal") for ph in Phase}
    sps_mod = {ph: extract_phase(feeder, ph, "decoupled_approx") for ph in Phase}
    n_br = len(feeder.order)

    results = {}
    for direction in ("up", "down"):
        if direction not in directions:
            results[direction] = DirectionResult("not_run", None, None, None, None)
            continue
        # selection pass(es): start from the fully modified model
        branch_mask = np.ones(n_br, dtype=bool)
        current_sps = sps_mod
        final_sols = None
        for _ in range(selection_passes):
            sols = [_solve_phase(current_sps[ph], cfg, direction) for ph in Phase]
            if any(s.status != "optimal" for s in sols):
                final_sols = sols
                break
            inj = _injection_matrix(feeder, dict(zip(Phase, sols)))
            res3 = solve_three_phase(feeder, inj)
            diff = np.zeros((n_br, 3))
            for ph, sol in zip(Phase, sols):
                per = solve_single_phase(
                    current_sps[ph], sol.p_pu + 1j * sol.q_pu
                )
                diff[:, ph] = np.abs(
                    res3.v_mag[feeder.order, ph] - per.v_mag[feeder.order]
                )
            selected = set(feeder.order[diff.max(axis=1) > epsilon])
            branch_mask = np.array(
                [
                    (npos in selected) or (feeder.parent_pos[npos] in selected)
                    for npos in feeder.order
                ]
            )
            current_sps = {
                ph: _splice_impedance(sps_diag[ph], sps_mod[ph], branch_mask)
                for ph in Phase
            }
        if final_sols is None:
            final_sols = [_solve_phase(current_sps[ph], cfg, direction) for ph in Phase]
        lines = tuple(
            (feeder.buses[feeder.parent_pos[npos]].id, feeder.buses[npos].id)
            for k, npos in enumerate(feeder.order)
            if branch_mask[k]
        )
        results[direction] = _direction_result(
            feeder, cfg, final_sols, replicate=False,
            modified_lines=lines if all(s.status == "optimal" for s in final_sols) else lines,
        )
    return HcReport(
        method=method,
        feeder_buses=tuple(b.id for b in feeder.buses),
        up=results["up"],
        down=results["down"],
        runtime_sec=time.perf_counter() - started,
    )


def run_iterative(
    feeder: Feeder,
    alpha: float,
    max_iter: int,
    cfg: CiaConfig,
    directions: tuple = ("up", "down"),
) -> HcReport:
    """Iterative per-node voltage-bound relaxation.

    Each round solves the per-phase programs under the current bounds,
    validates the combined injections on the three-phase network against
    the ORIGINAL magnitude limits, and widens each node's bounds by
    ``alpha`` times the difference between the coupling-aware voltage
    estimate and the single-phase result. On the first three-phase
    violation the previous round's injections are returned, so the
    reported iterate is always validated.
    """
    started = time.perf_counter()
    _require_base_converges(feeder)
    method = MethodId(kind="iterative", alpha=alpha, max_iter=max_iter)
    v_min0, v_max0 = _scalar_limits(cfg)

    sps = {ph: extract_phase(feeder, ph, "diagonal") for ph in Phase}
    n_br = len(feeder.order)
    mask_nodes = feeder.phase_mask[feeder.order]

    results = {}
    iterations = {}
    for direction in ("up", "down"):
        if direction not in directions:
            results[direction] = DirectionResult("not_run", None, None, None, None)
            continue
        problems = {}
        for ph in Phase:
            sm = build_sensitivity_matrices(sps[ph])
            tp = build_taylor_point(sps[ph])
            problems[ph] = assemble_problem(
                sps[ph], sm, tp, dc_replace(cfg, direction=direction)
            )
        v_lo = np.full((n_br, 3), v_min0)
        v_hi = np.full((n_br, 3), v_max0)
        prev = None
        current = None
        it = 0
        stop_reason = "max_iter"
        while it < max_iter:
            it += 1
            sols = []
            for ph in Phase:
                problems[ph].set_voltage_bounds(v_lo[:, ph], v_hi[:, ph])
                sols.append(solve_hc_direction(problems[ph]))
            if any(s.status != "optimal" for s in sols):
                if prev is None:
                    results[direction] = DirectionResult(
                        "infeasible", None, None, None, None
                    )
                    stop_reason = "infeasible_first_iterate"
                else:
                    current = prev
                    stop_reason = "infeasible_relaxed"
                break
            inj = _injection_matrix(feeder, dict(zip(Phase, sols)))
            res3 = solve_three_phase(feeder, inj)
            vm3 = res3.v_mag
            violated = (
                not res3.converged
                or bool(
                    np.any(
                        feeder.phase_mask
                        & ((vm3 > v_max0 + 1e-12) | (vm3 < v_min0 - 1e-12))
                    )
                )
            )
            if violated:
                stop_reason = "violation"
                current = prev  # None on first iterate: reported below
                break
            metrics = compute_metrics(vm3, feeder.phase_mask, v_min0, v_max0)
            s_phase = feeder.s_base_phase_mva
            current = DirectionResult(
                status="optimal",
                hc_mw=hosting_capacity(sols),
                p_mw=inj.real * s_phase,
                q_mvar=inj.imag * s_phase,
                metrics=metrics,
                validation_converged=res3.converged,
            )
            prev = current
            if it == max_iter:
                break
            # coupling-aware estimate vs per-phase result, per node and phase
            v_est = estimate_phase_voltages(feeder, res3.i_branch)
            dv = np.zeros((n_br, 3))
            for ph, sol in zip(Phase, sols):
                per = solve_single_phase(sps[ph], sol.p_pu + 1j * sol.q_pu)
                dv[:, ph] = np.abs(v_est[feeder.order, ph]) - per.v_mag[feeder.order]
            dv = np.where(mask_nodes, np.abs(dv), 0.0)
            if alpha == 0.0 or (alpha * dv).max() < 1e-13:
                stop_reason = "stationary"
                break
            # widen by the observed model error: for alpha <= 1 the truth
            # stays inside the original limits on whichever side the error
            # points away from, and the three-phase check above guards the
            # other side
            v_hi += alpha * dv
            v_lo -= alpha * dv
        if direction not in results:
            if current is None:
                results[direction] = DirectionResult(
                    "validation_failed", None, None, None, None
                )
            else:
                results[direction] = current
        iterations[direction] = {"count": it, "stop": stop_reason}
    return HcReport(
        method=method,
        feeder_buses=tuple(b.id for b in feeder.buses),
        up=results["up"],
        down=results["down"],
        iterations=iterations,
        runtime_sec=time.perf_counter() - started,
    )


def run_random_search(
    feeder: Feeder,
    samples: int,
    seed: int,
    cfg: CiaConfig,
    directions: tuple = ("up", "down"),
    bisection_steps: int = 50,
) -> HcReport:
    """Seeded random-direction baseline.

    Draws nonnegative per-node per-phase direction vectors, scales each to
    the largest multiplier that keeps the exact three-phase validation
    free of voltage violations (bisection), and keeps the best total.
    Deterministic for a fixed seed.
    """
    started = time.perf_counter()
    base = _require_base_converges(feeder)
    method = MethodId(kind="random_search", samples=samples, seed=seed)
    v_min, v_max = _scalar_limits(cfg)
    base_metrics = compute_metrics(base.v_mag, feeder.phase_mask, v_min, v_max)
    if base_metrics.n_v > 0:
        raise Infeasible("base case already violates the voltage limits")

    mask = feeder.phase_mask.copy()
    mask[feeder.bus_pos[feeder.slack_bus], :] = False
    l_cap = cfg.l_max
    rng = np.random.default_rng(seed)

    def feasible(injections) -> bool:
        res = solve_three_phase(feeder, injections)
        if not res.converged:
            return False
        vm = res.v_mag
        ok = not np.any(feeder.phase_mask & ((vm > v_max) | (vm < v_min)))
        if ok and l_cap is not None:
            cap = np.broadcast_to(np.asarray(l_cap, float), (len(feeder.order),))
            ok = bool(np.all(res.l_branch.max(axis=1) <= cap))
        return ok

    results = {}
    for direction in ("up", "down"):
        if direction not in directions:
            results[direction] = DirectionResult("not_run", None, None, None, None)
            continue
        sign = 1.0 if direction == "up" else -1.0
        best_total = 0.0
        best_inj = np.zeros((feeder.n_buses, 3), dtype=complex)
        for _ in range(samples):
            d = rng.random((feeder.n_buses, 3)) * mask
            total = d.sum()
            if total == 0.0:
                continue
            d /= total
            # expand then bisect the feasible multiplier
            lo, hi = 0.0, 1.0
            grow = 0
            while feasible(sign * hi * d) and grow < 40:
                lo = hi
                hi *= 2.0
                grow += 1
            for _ in range(bisection_steps):
                mid = 0.5 * (lo + hi)
                if feasible(sign * mid * d):
                    lo = mid
                else:
                    hi = mid
            if lo > best_total:
                best_total = lo
                best_inj = sign * lo * d
        res, metrics = validate_injections(feeder, best_inj, v_min, v_max)
        s_phase = feeder.s_base_phase_mva
        results[direction] = DirectionResult(
            status="optimal",
            hc_mw=float(sign * best_total * s_phase),
            p_mw=best_inj.real * s_phase,
            q_mvar=best_inj.imag * s_phase,
            metrics=metrics,
            validation_converged=res.converged,
        )
    return HcReport(
        method=method,
        feeder_buses=tuple(b.id for b in feeder.buses),
        up=results["up"],
        down=results["down"],
        runtime_sec=time.perf_counter() - started,
    )


def run(
    feeder: Feeder,
    method: MethodId,
    cfg: CiaConfig,
    directions: tuple = ("up", "down"),
) -> HcReport:
    """Dispatch any method id to its runner."""
    if method.kind in BASIC_KINDS:
        return run_method(feeder, method, cfg, directions)
    if method.kind == "modz":
        return run_modz(
            feeder, method.epsilon, cfg, directions, method.selection_passes
        )
    if method.kind == "iterative":
        return run_iterative(feeder, method.alpha, method.max_iter, cfg, directions)
    return run_random_search(feeder, method.samples, method.seed, cfg, directions)


def run_scenario_suite(
    feeder: Feeder,
    method: MethodId,
    cfg: CiaConfig,
    scenarios: tuple = ("i", "ii", "iii"),
) -> dict:
    """Run a method across load scenarios and aggregate the scores.

    Violation counts and sums are added across scenarios, the maximum
    violation is the worst one seen, margins and unbalance factors are
    averaged, and so is the hosting capacity. Scores come from the
    consumption direction's validation, capacities from both directions.
    """
    reports = {sc: run(apply_scenario(feeder, sc), method, cfg) for sc in scenarios}
    downs = [r.down.metrics for r in reports.values() if r.down.metrics is not None]
    agg = {
        "scenarios": list(scenarios),
        "N_v": int(sum(m.n_v for m in downs)) if downs else None,
        "M_v": float(max(m.m_v for m in downs)) if downs else None,
        "S_v": float(sum(m.s_v for m in downs)) if downs else None,
        "W_M": float(np.mean([m.w_m for m in downs])) if downs else None,
        "VUF_percent": float(np.mean([m.vuf for m in downs])) if downs else None,
        "hc_down_mw": (
            float(np.mean([r.down.hc_mw for r in reports.values()
                           if r.down.hc_mw is not None]))
            if any(r.down.hc_mw is not None for r in reports.values()) else None
        ),
        "hc_up_mw": (
            float(np.mean([r.up.hc_mw for r in reports.values()
                           if r.up.hc_mw is not None]))
            if any(r.up.hc_mw is not None for r in reports.values()) else None
        ),
    }
    return {"aggregate": agg, "reports": reports}


# ---------------------------------------------------------------------------
# report output helpers
# ---------------------------------------------------------------------------


def report_nodal_csv(report: HcReport) -> str:
    """Per-node injection limits as CSV (MW / MVAr per phase)."""
    buf = io.StringIO()
    buf.write("bus_id,phase,p_up_mw,q_up_mvar,p_down_mw,q_down_mvar\n")
    for k, bid in enumerate(report.feeder_buses):
        for ph in Phase:
            up_p = report.up.p_mw[k, ph] if report.up.p_mw is not None else ""
            up_q = report.up.q_mvar[k, ph] if report.up.q_mvar is not None else ""
            dn_p = report.down.p_mw[k, ph] if report.down.p_mw is not None else ""
            dn_q = report.down.q_mvar[k, ph] if report.down.q_mvar is not None else ""
            buf.write(f"{bid},{ph.name},{up_p},{up_q},{dn_p},{dn_q}\n")
    return buf.getvalue()


def plot_data_csv(feeder: Feeder, report: HcReport) -> dict:
    """Figure-style data sets derived from a report.

    ``voltage_profile``      validated three-phase magnitudes per direction;
    ``predicted_vs_actual``  single-phase model prediction (diagonal
                             extraction) against the three-phase magnitude;
    ``hc_per_node``          per-node per-phase injection bars.
    """
    out = {}
    profiles = {}
    predicted = {}
    for direction in ("up", "down"):
        d = getattr(report, direction)
        if d.p_mw is None:
            continue
        inj = (d.p_mw + 1j * d.q_mvar) / feeder.s_base_phase_mva
        res = solve_three_phase(feeder, inj)
        profiles[direction] = res.v_mag
        pred = np.zeros((feeder.n_buses, 3))
        for ph in Phase:
            sp = extract_phase(feeder, ph, "diagonal")
            per = solve_single_phase(sp, inj[feeder.order, ph])
            pred[:, ph] = per.v_mag
        predicted[direction] = pred

    buf = io.StringIO()
    buf.write("bus_id,phase,direction,v_mag_pu\n")
    for direction, vm in profiles.items():
        for k, bid in enumerate(report.feeder_buses):
            for ph in Phase:
                if feeder.phase_mask[k, ph]:
                    buf.write(f"{bid},{ph.name},{direction},{vm[k, ph]:.8f}\n")
    out["voltage_profile"] = buf.getvalue()

    buf = io.StringIO()
    buf.write("bus_id,phase,direction,v_single_phase_pu,v_three_phase_pu\n")
    for direction, vm in profiles.items():
        pred = predicted[direction]
        for k, bid in enumerate(report.feeder_buses):
            for ph in Phase:
                if feeder.phase_mask[k, ph]:
                    buf.write(
                        f"{bid},{ph.name},{direction},"
                        f"{pred[k, ph]:.8f},{vm[k, ph]:.8f}\n"
                    )
    out["predicted_vs_actual"] = buf.getvalue()

    buf = io.StringIO()
    buf.write("bus_id,phase,p_up_mw,p_down_mw\n")
    for k, bid in enumerate(report.feeder_buses):
        for ph in Phase:
            up = report.up.p_mw[k, ph] if report.up.p_mw is not None else 0.0
            dn = report.down.p_mw[k, ph] if report.down.p_mw is not None else 0.0
            buf.write(f"{bid},{ph.name},{up:.6f},{dn:.6f}\n")
    out["hc_per_node"] = buf.getvalue()
    return out
