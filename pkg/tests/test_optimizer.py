"""Convex hosting-capacity programs: assembly, solving, guarantees."""

import dataclasses

import numpy as np
import pytest

from phasecap.errors import InvalidConfig, MixedStatus
from phasecap.feeder import Phase, extract_phase, generate_synthetic_feeder
from phasecap.lindistflow import build_sensitivity_matrices, build_taylor_point
from phasecap.loadflow import solve_single_phase
from phasecap.optimizer import (
    CiaConfig,
    assemble_problem,
    hosting_capacity,
    solve_hc_direction,
    verify_solution,
)

from conftest import make_two_bus


def phase_problem(feeder, phase=Phase.a, mode="diagonal", **cfg_kwargs):
    sp = extract_phase(feeder, phase, mode)
    sm = build_sensitivity_matrices(sp)
    tp = build_taylor_point(sp)
    cfg = CiaConfig(**cfg_kwargs)
    return sp, assemble_problem(sp, sm, tp, cfg)


class TestConfig:
    def test_bad_direction(self):
        with pytest.raises(InvalidConfig):
            CiaConfig(direction="sideways").validate()

    def test_bounds_ordering(self):
        with pytest.raises(InvalidConfig):
            CiaConfig(v_min=1.05, v_max=0.95).validate()

    def test_weights_nonnegative(self):
        with pytest.raises(InvalidConfig):
            CiaConfig(weights=np.array([-1.0, 1.0])).validate(2)

    def test_free_q_needs_cap(self):
        uncapped = make_two_bus()  # no apparent-power limits anywhere
        with pytest.raises(InvalidConfig):
            phase_problem(uncapped, q_mode="free_within_cone", s_max_mva=None)


class TestAssembly:
    def test_two_bus_structure(self):
        f = make_two_bus(s_max=1.0)
        _, prob = phase_problem(f, l_max=1.0)
        s = prob.structure
        assert s["n_branches"] == 1
        assert s["decision_scalars"] == 1  # q fixed at base
        assert s["proxy_scalars"] == 8
        assert s["aux_scalars"] == 1
        assert s["abs_linear_constraints"] == 2
        assert s["quadratic_constraints"] == 8
        # voltage pair plus the current cap; a lower current bound has no
        # physical meaning and is not part of the configuration surface
        assert s["bound_constraints"] == 3

    def test_free_q_adds_variables_and_cone(self, small_feeder):
        _, fixed = phase_problem(small_feeder)
        _, free = phase_problem(small_feeder, q_mode="free_within_cone",
                                s_max_mva=0.4)
        n = fixed.structure["n_branches"]
        assert fixed.structure["decision_scalars"] == n
        assert free.structure["decision_scalars"] == 2 * n
        assert free.vars["q"] is not None
        assert fixed.vars["q"] is None
        assert free.structure["cone_constraints"] == 1

    def test_zero_load_pinned_at_slack_voltage(self):
        f = make_two_bus(p_load=0.0, q_load=0.0, slack_voltage=1.0)
        _, prob = phase_problem(f, v_max=1.0)
        sol = solve_hc_direction(prob)
        assert sol.status == "optimal"
        assert sol.hc_total_mw == pytest.approx(0.0, abs=1e-6)


class TestSolve:
    def test_infeasible_when_base_violates(self):
        # deep base-case drop below the floor makes p = 0 infeasible
        f = make_two_bus(r=0.05, x=0.1, p_load=1.0, q_load=0.5)
        _, prob = phase_problem(f)
        sol = solve_hc_direction(prob)
        assert sol.status == "infeasible"
        with pytest.raises(Exception):
            sol.require_optimal()

    def test_residuals_verified_independently(self, small_feeder):
        _, prob = phase_problem(small_feeder)
        sol = solve_hc_direction(prob)
        assert sol.status == "optimal"
        assert sol.solve_stats["max_residual"] <= 1e-8
        assert verify_solution(prob) <= 1e-8

    @pytest.mark.parametrize("direction", ["up", "down"])
    def test_soundness_per_phase(self, small_feeder, direction):
        """The defining property: optimal injections keep the nonlinear
        per-phase solution inside every configured limit."""
        for ph in Phase:
            sp, prob = phase_problem(small_feeder, phase=ph,
                                     direction=direction)
            sol = solve_hc_direction(prob).require_optimal()
            res = solve_single_phase(sp, sol.p_pu + 1j * sol.q_pu, tol=1e-12)
            assert res.converged
            vm = np.abs(res.v[sp.order])
            assert vm.min() >= 0.95 - 1e-6
            assert vm.max() <= 1.05 + 1e-6

    @pytest.mark.parametrize("direction", ["up", "down"])
    def test_proxy_ordering_at_optimum(self, small_feeder, direction):
        """Voltage proxies sandwich the nonlinear solution tightly; the
        current envelopes carry the second-order expansion's residual, which
        grows with the cube of the voltage excursion on deep-dip feeders."""
        sp, prob = phase_problem(small_feeder, direction=direction)
        sol = solve_hc_direction(prob).require_optimal()
        res = solve_single_phase(sp, sol.p_pu + 1j * sol.q_pu, tol=1e-12)
        v_sq = res.v_sq[sp.order]
        l_true = res.l_branch
        assert np.all(sol.proxies["v_minus"] <= v_sq + 1e-6)
        assert np.all(v_sq <= sol.proxies["v_plus"] + 1e-6)
        assert np.all(sol.proxies["l_minus"] <= l_true + 2e-3)
        assert np.all(l_true <= sol.proxies["l_plus"] + 2e-3)

    @pytest.mark.parametrize("direction", ["up", "down"])
    def test_proxy_ordering_tight_on_ieee37(self, ieee37, ieee37_config,
                                            direction):
        cfg = dataclasses.replace(ieee37_config, direction=direction)
        for ph in Phase:
            sp = extract_phase(ieee37, ph, "diagonal")
            sm = build_sensitivity_matrices(sp)
            tp = build_taylor_point(sp)
            sol = solve_hc_direction(
                assemble_problem(sp, sm, tp, cfg)
            ).require_optimal()
            res = solve_single_phase(sp, sol.p_pu + 1j * sol.q_pu, tol=1e-12)
            v_sq = res.v_sq[sp.order]
            l_true = res.l_branch
            assert np.all(sol.proxies["v_minus"] <= v_sq + 1e-6)
            assert np.all(v_sq <= sol.proxies["v_plus"] + 1e-6)
            assert np.all(sol.proxies["l_minus"] <= l_true + 1e-6)
            assert np.all(l_true <= sol.proxies["l_plus"] + 1e-6)

    def test_direction_consistency(self, small_feeder):
        _, up = phase_problem(small_feeder, direction="up")
        _, down = phase_problem(small_feeder, direction="down")
        hc_up = solve_hc_direction(up).require_optimal().hc_total_mw
        hc_down = solve_hc_direction(down).require_optimal().hc_total_mw
        assert hc_down <= 0.0 <= hc_up

    def test_weights_change_split_not_feasibility(self, small_feeder):
        sp = extract_phase(small_feeder, Phase.a, "diagonal")
        sm = build_sensitivity_matrices(sp)
        tp = build_taylor_point(sp)
        rng = np.random.default_rng(5)
        w = rng.uniform(0.1, 3.0, size=sp.n_branches)
        cfg = CiaConfig(weights=w, direction="up")
        sol = solve_hc_direction(assemble_problem(sp, sm, tp, cfg))
        sol.require_optimal()
        res = solve_single_phase(sp, sol.p_pu + 1j * sol.q_pu, tol=1e-12)
        vm = np.abs(res.v[sp.order])
        assert vm.max() <= 1.05 + 1e-6 and vm.min() >= 0.95 - 1e-6

    def test_wider_bounds_never_reduce_capacity(self, small_feeder):
        sp = extract_phase(small_feeder, Phase.a, "diagonal")
        sm = build_sensitivity_matrices(sp)
        tp = build_taylor_point(sp)
        narrow = solve_hc_direction(
            assemble_problem(sp, sm, tp, CiaConfig(direction="up"))
        ).require_optimal()
        wide = solve_hc_direction(
            assemble_problem(
                sp, sm, tp, CiaConfig(v_min=0.93, v_max=1.07, direction="up")
            )
        ).require_optimal()
        assert wide.hc_total_mw >= narrow.hc_total_mw - 1e-9

    def test_current_cap_binds(self, small_feeder):
        sp = extract_phase(small_feeder, Phase.a, "diagonal")
        sm = build_sensitivity_matrices(sp)
        tp = build_taylor_point(sp)
        free = solve_hc_direction(
            assemble_problem(sp, sm, tp, CiaConfig(direction="up"))
        ).require_optimal()
        capped_cfg = CiaConfig(direction="up",
                               l_max=3.0 * np.maximum(tp.l0, 1e-6))
        capped = solve_hc_direction(
            assemble_problem(sp, sm, tp, capped_cfg)
        ).require_optimal()
        assert capped.hc_total_mw <= free.hc_total_mw + 1e-9
        assert np.all(capped.proxies["l_plus"] <= capped_cfg.l_max + 1e-6)

    def test_fixed_q_cone_reduces_to_interval(self):
        # |p - p_load| <= sqrt(s_max^2 - q_load^2) when q stays at base
        f = make_two_bus(p_load=0.06, q_load=0.03, s_max=0.12)
        sp, prob = phase_problem(f, v_max=1.2)  # voltage never binds
        sol = solve_hc_direction(prob).require_optimal()
        cap = np.sqrt(0.12**2 - 0.03**2)
        assert sol.p_pu[0] == pytest.approx(0.06 + cap, abs=1e-6)


class TestAggregation:
    def test_sum_across_phases(self, small_feeder):
        sols = []
        for ph in Phase:
            _, prob = phase_problem(small_feeder, phase=ph)
            sols.append(solve_hc_direction(prob).require_optimal())
        total = hosting_capacity(sols)
        assert total == pytest.approx(sum(s.hc_total_mw for s in sols))

    def test_replicate_multiplies_by_three(self, small_feeder):
        _, prob = phase_problem(small_feeder)
        sol = solve_hc_direction(prob).require_optimal()
        assert hosting_capacity([sol], replicate_single_phase=True) == (
            pytest.approx(3.0 * sol.hc_total_mw)
        )

    def test_mixed_status_rejected(self, small_feeder):
        _, prob = phase_problem(small_feeder)
        good = solve_hc_direction(prob).require_optimal()
        bad = dataclasses.replace(good, status="infeasible")
        with pytest.raises(MixedStatus):
            hosting_capacity([good, bad, good])
        with pytest.raises(MixedStatus):
            hosting_capacity([])
