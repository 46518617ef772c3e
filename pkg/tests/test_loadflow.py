"""Exact load flow: sweeps, estimator, conservation properties."""

import numpy as np
import pytest

from phasecap.feeder import (
    PHASE_ROTATION,
    Phase,
    extract_phase,
    generate_synthetic_feeder,
)
from phasecap.loadflow import (
    estimate_phase_voltages,
    power_balance,
    result_to_csv,
    solve_single_phase,
    solve_three_phase,
)

from conftest import make_two_bus


def closed_form_two_bus(r, x, p, q, v0):
    """High-voltage root of the single-branch quadratic in |V1|^2."""
    b = v0**2 / 2 - (r * p + x * q)
    disc = b**2 - (r**2 + x**2) * (p**2 + q**2)
    return np.sqrt(b + np.sqrt(disc))


class TestThreePhase:
    def test_no_load_identity(self):
        f = make_two_bus(p_load=0.0, q_load=0.0)
        res = solve_three_phase(f)
        assert res.converged and res.iterations == 1
        np.testing.assert_allclose(res.v_mag, f.slack_voltage)
        np.testing.assert_array_equal(res.i_branch, 0)

    def test_balanced_matches_single_phase(self, balanced_feeder):
        res3 = solve_three_phase(balanced_feeder)
        assert res3.converged
        vm = res3.v_mag
        np.testing.assert_allclose(vm[:, 0], vm[:, 1], atol=1e-10)
        np.testing.assert_allclose(vm[:, 0], vm[:, 2], atol=1e-10)
        sp = extract_phase(balanced_feeder, Phase.a, "decoupled")
        res1 = solve_single_phase(sp)
        np.testing.assert_allclose(vm[:, 0], np.abs(res1.v), atol=1e-8)

    def test_injection_cancels_load(self, small_feeder):
        inj = small_feeder.loads.copy()
        res = solve_three_phase(small_feeder, inj)
        assert res.converged
        np.testing.assert_allclose(res.v_mag, small_feeder.slack_voltage,
                                   atol=1e-12)

    def test_ieee37_base_case_within_ansi(self, ieee37):
        res = solve_three_phase(ieee37)
        assert res.converged
        assert res.v_mag.min() >= 0.95
        assert res.v_mag.max() <= 1.05

    def test_power_conservation(self, ieee37, small_feeder):
        for f in (ieee37, small_feeder):
            res = solve_three_phase(f)
            assert power_balance(f, res) < 1e-8

    def test_kcl_at_convergence(self, small_feeder):
        f = small_feeder
        res = solve_three_phase(f)
        i_load = np.conj(
            np.where(f.phase_mask, f.loads, 0.0) / res.v
        )
        i_load[~f.phase_mask] = 0.0
        pos_in_order = np.full(f.n_buses, -1, dtype=int)
        pos_in_order[f.order] = np.arange(len(f.order))
        for k, npos in enumerate(f.order):
            children = [pos_in_order[c] for c in f.order if f.parent_pos[c] == npos]
            residual = res.i_branch[k] - i_load[npos] - sum(
                (res.i_branch[c] for c in children), np.zeros(3, dtype=complex)
            )
            assert np.abs(residual).max() < 1e-9

    def test_leaf_generation_does_not_drop_leaf_voltage(self):
        f = make_two_bus(p_load=0.3, q_load=0.1)
        base = solve_three_phase(f)
        inj = np.zeros((2, 3), dtype=complex)
        inj[1, :] = 0.05
        boosted = solve_three_phase(f, inj)
        assert np.all(boosted.v_mag[1] >= base.v_mag[1] - 1e-12)

    def test_nonconvergence_flagged_not_raised(self):
        f = make_two_bus(p_load=80.0, q_load=40.0)  # far beyond loadability
        res = solve_three_phase(f)
        assert not res.converged
        assert res.max_mismatch > 0


class TestSinglePhase:
    def test_flat_no_load(self):
        sp = extract_phase(make_two_bus(p_load=0.0, q_load=0.0), Phase.a)
        res = solve_single_phase(sp)
        assert res.converged and res.iterations == 1
        np.testing.assert_allclose(np.abs(res.v), sp.slack_voltage)

    def test_two_bus_closed_form(self):
        r, x, p, q = 0.01, 0.02, 1.0, 0.5
        sp = extract_phase(make_two_bus(r, x, p, q), Phase.a)
        res = solve_single_phase(sp, tol=1e-12)
        assert res.converged
        expected = closed_form_two_bus(r, x, p, q, 1.0)
        assert abs(res.v[1]) == pytest.approx(expected, abs=1e-9)

    def test_injection_cancels_load(self, small_feeder):
        sp = extract_phase(small_feeder, Phase.b)
        res = solve_single_phase(sp, sp.p_load + 1j * sp.q_load)
        assert res.converged
        np.testing.assert_allclose(np.abs(res.v), sp.slack_voltage, atol=1e-12)
        np.testing.assert_allclose(np.abs(res.i_branch), 0, atol=1e-12)


class TestEstimator:
    def test_zero_currents_gives_slack_everywhere(self, small_feeder):
        est = estimate_phase_voltages(
            small_feeder, np.zeros((len(small_feeder.order), 3), dtype=complex)
        )
        expected = small_feeder.slack_voltage * PHASE_ROTATION
        np.testing.assert_allclose(est, np.tile(expected, (small_feeder.n_buses, 1)))

    def test_self_consistency_with_converged_solve(self, ieee37):
        res = solve_three_phase(ieee37, tol=1e-12)
        est = estimate_phase_voltages(ieee37, res.i_branch)
        np.testing.assert_allclose(est, res.v, atol=1e-10)

    def test_zero_mutuals_decouple(self):
        f = make_two_bus(p_load=0.2, q_load=0.1)
        res = solve_three_phase(f)
        est = estimate_phase_voltages(f, res.i_branch)
        z = f.branches[0].z3[0, 0]
        for ph in Phase:
            expected = f.slack_voltage * PHASE_ROTATION[ph] - z * res.i_branch[0, ph]
            assert est[1, ph] == pytest.approx(expected, abs=1e-12)


class TestOracleSymmetry:
    def test_decoupled_extraction_matches_three_phase(self, balanced_feeder):
        """Transposed lines + balanced loads: per-phase solves with the
        mutual-subtracted impedance reproduce the three-phase solution."""
        res3 = solve_three_phase(balanced_feeder, tol=1e-12)
        for ph in Phase:
            sp = extract_phase(balanced_feeder, ph, "decoupled")
            res1 = solve_single_phase(sp, tol=1e-12)
            np.testing.assert_allclose(
                np.abs(res1.v), res3.v_mag[:, ph], atol=1e-8
            )


def test_csv_dump_deterministic(ieee37):
    res = solve_three_phase(ieee37)
    bus_csv, br_csv = result_to_csv(ieee37, res)
    bus_csv2, br_csv2 = result_to_csv(ieee37, res)
    assert bus_csv == bus_csv2 and br_csv == br_csv2
    assert bus_csv.startswith("bus_id,phase,v_mag_pu,v_ang_deg\n")
    assert br_csv.startswith("from,to,phase,i_mag_pu,i_ang_deg\n")
    assert len(bus_csv.strip().split("\n")) == 1 + 37 * 3
