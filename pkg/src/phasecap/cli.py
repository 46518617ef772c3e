"""Command-line front end.

Three commands:

  compute    run a hosting-capacity method on a feeder file and write a
             report (JSON, optionally per-node CSV and plot data)
  validate   run the exact three-phase load flow for a given injection
             file and score it against the voltage limits
  generate   write a synthetic feeder file

Reports are deterministic for identical inputs: volatile values (wall
time, timestamps) live in a separate ``meta`` object, and files are
written atomically (write to a temp name, then rename).
"""

from __future__ import annotations

import json
import os
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import ieee37
from .errors import Infeasible, NonConvergence, PhasecapError
from .feeder import (
    Feeder,
    Phase,
    apply_scenario,
    generate_synthetic_feeder,
    parse_feeder,
    serialize_feeder,
)
from .lindistflow import build_sensitivity_matrices, matrices_to_csv
from .loadflow import solve_three_phase
from .methods import (
    HcReport,
    MethodId,
    compute_metrics,
    plot_data_csv,
    report_nodal_csv,
    run,
)
from .optimizer import CiaConfig

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2
EXIT_VIOLATIONS = 3

METHOD_NAMES = {
    "1i": "m1i",
    "1ii": "m1ii",
    "2ia": "m2i_a",
    "2ib": "m2i_b",
    "2ic": "m2i_c",
    "2ii": "m2ii",
    "modz": "modz",
    "iterative": "iterative",
    "random": "random_search",
}


def _write_atomic(path: Path, content: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(content)
    os.replace(tmp, path)


def _load_feeder(path: str) -> Feeder:
    return parse_feeder(Path(path).read_text())


def _weights(spec: str, feeder: Feeder) -> np.ndarray | None:
    """uniform, leaf2x (leaf nodes weighted double) or a JSON file path."""
    if spec == "uniform":
        return None
    n = len(feeder.order)
    if spec == "leaf2x":
        w = np.ones(n)
        parents = set(feeder.parent_pos[npos] for npos in feeder.order)
        for k, npos in enumerate(feeder.order):
            if npos not in parents:
                w[k] = 2.0
        return w
    doc = json.loads(Path(spec).read_text())
    w = np.ones(n)
    for k, npos in enumerate(feeder.order):
        bid = str(feeder.buses[npos].id)
        if bid in doc:
            w[k] = float(doc[bid])
    return w


@click.group()
def main():
    """Hosting-capacity analysis for unbalanced radial feeders."""


@main.command()
@click.option("--feeder", "feeder_path", required=True, type=click.Path(exists=True))
@click.option("--method", "method_name", required=True,
              type=click.Choice(sorted(METHOD_NAMES)))
@click.option("--epsilon", type=float, default=ieee37.MODZ_EPSILON,
              show_default=True, help="selection threshold for modz (pu)")
@click.option("--alpha", type=float, default=0.5, show_default=True,
              help="bound-relaxation step for iterative")
@click.option("--max-iter", type=int, default=10, show_default=True)
@click.option("--scenario", type=click.Choice(["i", "ii", "iii"]), default=None,
              help="apply a load scenario before solving")
@click.option("--vmin", type=float, default=0.95, show_default=True)
@click.option("--vmax", type=float, default=1.05, show_default=True)
@click.option("--smax-kva", type=float, default=None,
              help="per-node per-phase apparent-power cap override")
@click.option("--l-max", type=float, default=None,
              help="squared branch-current cap (pu^2)")
@click.option("--q-mode", type=click.Choice(["fixed_at_base", "free_within_cone"]),
              default="fixed_at_base", show_default=True)
@click.option("--weights", default="uniform", show_default=True,
              help="uniform, leaf2x, or a JSON file of per-bus weights")
@click.option("--direction", type=click.Choice(["up", "down", "both"]),
              default="both", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--samples", type=int, default=20, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default=".", show_default=True)
@click.option("--format", "formats", type=click.Choice(["json", "csv"]),
              multiple=True, default=("json",), show_default=True)
@click.option("--plot-data", is_flag=True, help="also write figure-style CSVs")
@click.option("--dump-matrices", is_flag=True,
              help="dump per-phase sensitivity matrices as CSV triplets")
def compute(feeder_path, method_name, epsilon, alpha, max_iter, scenario,
            vmin, vmax, smax_kva, l_max, q_mode, weights, direction, seed,
            samples, out_dir, formats, plot_data, dump_matrices):
    """Compute hosting capacity and write the report."""
    started = time.time()
    try:
        feeder = _load_feeder(feeder_path)
        if scenario:
            feeder = apply_scenario(feeder, scenario)
        kind = METHOD_NAMES[method_name]
        method = MethodId(
            kind=kind,
            epsilon=epsilon if kind == "modz" else None,
            alpha=alpha if kind == "iterative" else None,
            max_iter=max_iter if kind == "iterative" else None,
            samples=samples if kind == "random_search" else None,
            seed=seed if kind == "random_search" else None,
        )
        cfg = CiaConfig(
            v_min=vmin,
            v_max=vmax,
            l_max=l_max,
            weights=_weights(weights, feeder),
            s_max_mva=None if smax_kva is None else smax_kva / 1e3,
            q_mode=q_mode,
        )
        directions = ("up", "down") if direction == "both" else (direction,)
        report = run(feeder, method, cfg, directions=directions)

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"hc_{method_name}"
        payload = {
            "report": report.to_dict(),
            "meta": {
                "feeder": str(feeder_path),
                "scenario": scenario,
                "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
                "runtime_sec": report.runtime_sec,
            },
        }
        _write_atomic(out / f"{stem}.json",
                      json.dumps(payload, indent=2, sort_keys=True) + "\n")
        if "csv" in formats:
            _write_atomic(out / f"{stem}_nodal.csv", report_nodal_csv(report))
        if plot_data:
            for name, content in plot_data_csv(feeder, report).items():
                _write_atomic(out / f"{stem}_{name}.csv", content)
        if dump_matrices:
            from .feeder import extract_phase

            for ph in Phase:
                sm = build_sensitivity_matrices(extract_phase(feeder, ph))
                for name, content in matrices_to_csv(sm).items():
                    _write_atomic(out / f"matrix_{ph.name}_{name}.csv", content)

        _print_summary(report)
        statuses = {report.up.status, report.down.status} - {"not_run"}
        if "infeasible" in statuses:
            sys.exit(EXIT_INFEASIBLE)
        if statuses - {"optimal"}:
            sys.exit(EXIT_ERROR)
        sys.exit(EXIT_OK)
    except PhasecapError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_INFEASIBLE if isinstance(exc, Infeasible) else EXIT_ERROR)


def _print_summary(report: HcReport):
    click.echo(f"method: {report.method.label}")
    for name in ("up", "down"):
        d = getattr(report, name)
        if d.status == "not_run":
            continue
        if d.hc_mw is None:
            click.echo(f"  HC {name}: NA ({d.status})")
            continue
        m = d.metrics
        click.echo(
            f"  HC {name}: {d.hc_mw:+.3f} MW   "
            f"N_v={m.n_v} M_v={m.m_v:.5f} S_v={m.s_v:.5f} "
            f"W_M={m.w_m:.4f} VUF={m.vuf:.3f}%"
        )


@main.command()
@click.option("--feeder", "feeder_path", required=True, type=click.Path(exists=True))
@click.option("--injections", "inj_path", required=True, type=click.Path(exists=True),
              help="JSON: {bus_id: {phase: [p_mw, q_mvar]}}")
@click.option("--vmin", type=float, default=0.95, show_default=True)
@click.option("--vmax", type=float, default=1.05, show_default=True)
def validate(feeder_path, inj_path, vmin, vmax):
    """Exact three-phase validation of an injection file."""
    try:
        feeder = _load_feeder(feeder_path)
        doc = json.loads(Path(inj_path).read_text())
        inj = np.zeros((feeder.n_buses, 3), dtype=complex)
        for bid, phases in doc.items():
            pos = feeder.bus_pos.get(int(bid))
            if pos is None:
                raise PhasecapError(f"injection references unknown bus {bid}")
            for token, pair in phases.items():
                ph = Phase.parse(token)
                inj[pos, ph] = (pair[0] + 1j * pair[1]) / feeder.s_base_phase_mva
        res = solve_three_phase(feeder, inj)
        if not res.converged:
            raise NonConvergence("validation load flow did not converge")
        metrics = compute_metrics(res.v_mag, feeder.phase_mask, vmin, vmax)
        for key, val in metrics.as_dict().items():
            click.echo(f"{key}: {val}")
        sys.exit(EXIT_OK if metrics.n_v == 0 else EXIT_VIOLATIONS)
    except PhasecapError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_ERROR)


@main.command()
@click.option("--buses", required=True, type=int)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--unbalance", type=float, default=0.2, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default="feeder.json",
              show_default=True)
def generate(buses, seed, unbalance, out_path):
    """Write a synthetic feeder file."""
    try:
        feeder = generate_synthetic_feeder(buses, seed=seed, unbalance=unbalance)
        _write_atomic(Path(out_path), serialize_feeder(feeder) + "\n")
        click.echo(f"wrote {out_path}: {feeder.n_buses} buses, "
                   f"{feeder.total_load_mw:.3f} MW")
        sys.exit(EXIT_OK)
    except PhasecapError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_ERROR)


@main.command("export-ieee37")
@click.option("--out", "out_path", type=click.Path(), default="ieee37.json",
              show_default=True)
def export_ieee37(out_path):
    """Write the adapted IEEE 37-node feeder file."""
    feeder = ieee37.build_ieee37()
    _write_atomic(Path(out_path), serialize_feeder(feeder) + "\n")
    click.echo(f"wrote {out_path}: {feeder.n_buses} buses, "
               f"{feeder.total_load_mw:.3f} MW")
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
