"""Command-line interface: exit codes, files, reproducibility."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from phasecap.cli import main
from phasecap.feeder import parse_feeder

from conftest import make_two_bus
from phasecap.feeder import serialize_feeder


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def feeder_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "feeder.json"
    runner = CliRunner()
    result = runner.invoke(
        main, ["generate", "--buses", "14", "--seed", "5",
               "--unbalance", "0.1", "--out", str(path)]
    )
    assert result.exit_code == 0, result.output
    return path


class TestGenerate:
    def test_file_parses(self, feeder_file):
        f = parse_feeder(feeder_file.read_text())
        assert f.n_buses == 14

    def test_below_minimum_exits_one(self, runner, tmp_path):
        result = runner.invoke(
            main, ["generate", "--buses", "1", "--out", str(tmp_path / "x.json")]
        )
        assert result.exit_code == 1

    def test_balanced_two_bus(self, runner, tmp_path):
        out = tmp_path / "two.json"
        result = runner.invoke(
            main, ["generate", "--buses", "2", "--seed", "7",
                   "--unbalance", "0", "--out", str(out)]
        )
        assert result.exit_code == 0
        f = parse_feeder(out.read_text())
        load = f.buses[1].load
        assert load[0] == load[1] == load[2]


class TestCompute:
    def test_reports_written_and_reproducible(self, runner, feeder_file, tmp_path):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        args = ["compute", "--feeder", str(feeder_file), "--method", "2ii",
                "--format", "json", "--format", "csv"]
        r1 = runner.invoke(main, args + ["--out", str(out1)])
        r2 = runner.invoke(main, args + ["--out", str(out2)])
        assert r1.exit_code == 0, r1.output
        assert "HC up" in r1.output and "HC down" in r1.output
        doc1 = json.loads((out1 / "hc_2ii.json").read_text())
        doc2 = json.loads((out2 / "hc_2ii.json").read_text())
        assert doc1["report"] == doc2["report"]  # meta may differ, report not
        assert (out1 / "hc_2ii_nodal.csv").exists()

    def test_direction_single(self, runner, feeder_file, tmp_path):
        r = runner.invoke(
            main, ["compute", "--feeder", str(feeder_file), "--method", "2ia",
                   "--direction", "up", "--out", str(tmp_path)]
        )
        assert r.exit_code == 0, r.output
        doc = json.loads((tmp_path / "hc_2ia.json").read_text())
        assert doc["report"]["down"]["status"] == "not_run"

    def test_bad_feeder_exits_one(self, runner, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{\"nope\": 1}")
        r = runner.invoke(
            main, ["compute", "--feeder", str(bad), "--method", "2ii",
                   "--out", str(tmp_path)]
        )
        assert r.exit_code == 1
        assert "error" in r.output

    def test_infeasible_exits_two(self, runner, tmp_path):
        overloaded = make_two_bus(r=0.05, x=0.1, p_load=1.0, q_load=0.5)
        path = tmp_path / "overloaded.json"
        path.write_text(serialize_feeder(overloaded))
        r = runner.invoke(
            main, ["compute", "--feeder", str(path), "--method", "1i",
                   "--out", str(tmp_path)]
        )
        assert r.exit_code == 2

    def test_scenario_and_weights_flags(self, runner, feeder_file, tmp_path):
        r = runner.invoke(
            main, ["compute", "--feeder", str(feeder_file), "--method", "2ii",
                   "--scenario", "ii", "--weights", "leaf2x",
                   "--out", str(tmp_path)]
        )
        assert r.exit_code == 0, r.output

    def test_plot_data_files(self, runner, feeder_file, tmp_path):
        r = runner.invoke(
            main, ["compute", "--feeder", str(feeder_file), "--method", "2ii",
                   "--plot-data", "--out", str(tmp_path)]
        )
        assert r.exit_code == 0
        for name in ("voltage_profile", "predicted_vs_actual", "hc_per_node"):
            assert (tmp_path / f"hc_2ii_{name}.csv").exists()


class TestValidate:
    def test_zero_injections_pass(self, runner, feeder_file, tmp_path):
        inj = tmp_path / "zero.json"
        inj.write_text("{}")
        r = runner.invoke(
            main, ["validate", "--feeder", str(feeder_file),
                   "--injections", str(inj)]
        )
        assert r.exit_code == 0, r.output
        assert "N_v: 0" in r.output

    def test_report_injections_pass(self, runner, feeder_file, tmp_path):
        out = tmp_path / "rep"
        runner.invoke(main, ["compute", "--feeder", str(feeder_file),
                             "--method", "2ii", "--out", str(out)])
        doc = json.loads((out / "hc_2ii.json").read_text())
        inj = {
            bus: {ph: [p, doc["report"]["up"]["q_mvar"][bus][k]]
                  for k, (ph, p) in enumerate(zip("abc", values))}
            for bus, values in doc["report"]["up"]["p_mw"].items()
        }
        path = tmp_path / "inj.json"
        path.write_text(json.dumps(inj))
        r = runner.invoke(
            main, ["validate", "--feeder", str(feeder_file),
                   "--injections", str(path)]
        )
        assert r.exit_code == 0, r.output

    def test_overscaled_injections_exit_three(self, runner, feeder_file,
                                              tmp_path):
        out = tmp_path / "rep10"
        runner.invoke(main, ["compute", "--feeder", str(feeder_file),
                             "--method", "2ii", "--out", str(out)])
        doc = json.loads((out / "hc_2ii.json").read_text())
        inj = {
            bus: {ph: [10.0 * p, 0.0]
                  for ph, p in zip("abc", values)}
            for bus, values in doc["report"]["up"]["p_mw"].items()
        }
        path = tmp_path / "inj10.json"
        path.write_text(json.dumps(inj))
        r = runner.invoke(
            main, ["validate", "--feeder", str(feeder_file),
                   "--injections", str(path)]
        )
        assert r.exit_code == 3, r.output

    def test_unknown_bus_exits_one(self, runner, feeder_file, tmp_path):
        path = tmp_path / "badinj.json"
        path.write_text(json.dumps({"999": {"a": [1.0, 0.0]}}))
        r = runner.invoke(
            main, ["validate", "--feeder", str(feeder_file),
                   "--injections", str(path)]
        )
        assert r.exit_code == 1


def test_export_ieee37(runner, tmp_path):
    out = tmp_path / "ieee37.json"
    r = runner.invoke(main, ["export-ieee37", "--out", str(out)])
    assert r.exit_code == 0
    f = parse_feeder(out.read_text())
    assert f.n_buses == 37
    assert f.total_load_mw == pytest.approx(2.457, abs=1e-9)
