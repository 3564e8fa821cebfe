"""Scenario runner: solve, evaluate, compare, export-mps, validate.

Scenario variants are parameter overlays applied to the scenario document
before model build, so one park file serves every case study:

    penalty-only      £0.8/kg discharge penalty on TN and TP
    no-transport      penalty-only with transport disabled
    hard-limits       concentration-style discharge limits (1.5e-5 kg/L N,
                      1e-6 kg/L P against total park inflow), no penalties
    hard-limits-2     hard-limits tightened tenfold
    recovery-only     resource prices (CH4 0.16, N 0.67, P 0.27 per unit)
                      at a 0.5 price factor, no penalties
    recovery+penalty  recovery prices and discharge penalties together
    as-given          no overlay, the file's own economics

The overlays name the bundled park's components (TN, TP) and resources
(CH4, N, P); for scenario files with other names use as-given.

Exit codes: 0 success/feasible, 1 infeasible or violations or failed runs,
2 usage errors.  Reports are byte-for-byte reproducible for a fixed
manifest at worker_count 1; wall-clock time is deliberately left out of
report.json for that reason.
"""
from __future__ import annotations

import copy
import csv
from dataclasses import dataclass, field
import io
import json
from pathlib import Path
import sys

import click

from parkflow import formulation, milp
from parkflow.evaluator import DesignReport, derive_pathways, evaluate_design
from parkflow.formulation import Design, build_model, extract_design
from parkflow.park import (
    Scenario,
    ScenarioError,
    cell_distance,
    elevation_class,
    scenario_from_dict,
    validate_scenario,
)
from parkflow.solver import SolveOptions, SolveResult, solve_external, solve_milp

_RESOURCE_PRICES = {"CH4": 0.16, "N": 0.67, "P": 0.27}
_LIMIT_KG_PER_L = {"TN": 1.5e-5, "TP": 1e-6}

# variant -> (penalties on, prices on, limit divisor or None, transport on)
VARIANTS: dict[str, tuple[bool, bool, float | None, bool]] = {
    "penalty-only": (True, False, None, True),
    "no-transport": (True, False, None, False),
    "hard-limits": (False, False, 1.0, True),
    "hard-limits-2": (False, False, 10.0, True),
    "recovery-only": (False, True, None, True),
    "recovery+penalty": (True, True, None, True),
}
ALIASES = {"hard-limits-1": "hard-limits", "recovery-penalty": "recovery+penalty"}
AS_GIVEN = "as-given"


def _check_variant(variant: str) -> str:
    name = ALIASES.get(variant, variant)
    if name != AS_GIVEN and name not in VARIANTS:
        raise click.UsageError(
            f"unknown variant {variant!r}; choose from "
            + ", ".join([*sorted(VARIANTS), AS_GIVEN])
        )
    return name


def apply_variant(doc: dict, variant: str) -> dict:
    """Overlay a named variant's economics onto a scenario document."""
    name = _check_variant(variant)
    if name == AS_GIVEN:
        return doc
    penalties, prices, limit_div, transport = VARIANTS[name]
    doc = copy.deepcopy(doc)
    eco: dict = {}
    eco["discharge_penalty_per_kg"] = {"TN": 0.8, "TP": 0.8} if penalties else {}
    eco["resource_price"] = dict(_RESOURCE_PRICES) if prices else {}
    eco["price_factor"] = 0.5 if prices else 1.0
    if limit_div is not None:
        eco["discharge_limits"] = {
            comp: {"unit": "kg_per_L", "value": value / limit_div}
            for comp, value in _LIMIT_KG_PER_L.items()
        }
    doc["economics"] = eco
    if not transport:
        doc["transport_enabled"] = False
    return doc


@dataclass
class RunManifest:
    scenario: str
    variant: str = "penalty-only"
    out_dir: str = "out"
    seed: int = 0
    options: SolveOptions = field(default_factory=SolveOptions)
    solver_cmd: str | None = None
    name: str = "run"


def load_manifest(path: str | Path) -> RunManifest:
    """Read a run manifest; the scenario path is resolved relative to the
    manifest file, the output directory relative to the working directory."""
    path = Path(path)
    doc = json.loads(path.read_text())
    opts_doc = doc.get("options", {})
    known = {
        "rel_gap", "abs_gap", "node_limit", "time_limit",
        "integrality_tol", "feasibility_tol", "worker_count",
    }
    unknown = set(opts_doc) - known
    if unknown:
        raise ScenarioError(f"manifest {path}: unknown options {sorted(unknown)}")
    scenario = str((path.parent / doc["scenario"]).resolve())
    return RunManifest(
        scenario=scenario,
        variant=str(doc.get("variant", "penalty-only")),
        out_dir=str(doc.get("out_dir", "out")),
        seed=int(doc.get("seed", 0)),
        options=SolveOptions(**opts_doc),
        solver_cmd=doc.get("solver_cmd"),
        name=path.stem,
    )


def _load_scenario(path: str | Path, variant: str) -> Scenario:
    doc = json.loads(Path(path).read_text())
    return scenario_from_dict(apply_variant(doc, variant))


def _report_doc(
    s: Scenario, variant: str, seed: int, res: SolveResult | None, rep: DesignReport
) -> dict:
    totals: dict[str, float] = {}
    for (j, p), v in rep.discharged.items():
        totals[p] = totals.get(p, 0.0) + v
    doc: dict = {
        "schema_version": 1,
        "scenario": s.name,
        "variant": variant,
        "seed": seed,
        "costs": {
            "transport": rep.cost_transport,
            "capex": rep.cost_capex,
            "opex": rep.cost_opex,
            "penalty": rep.cost_penalty,
            "revenue": rep.revenue,
            "total": rep.total,
        },
        "discharged_kg": {f"{j}/{p}": v for (j, p), v in sorted(rep.discharged.items())},
        "discharged_totals_kg": dict(sorted(totals.items())),
        "recovered": dict(sorted(rep.recovered.items())),
        "violations": [
            {"family": v.family, "location": v.location, "magnitude": v.magnitude}
            for v in rep.violations
        ],
        "notes": list(rep.notes),
    }
    if res is not None:
        doc["solver"] = {
            "status": res.status,
            "objective": res.objective,
            "best_bound": res.best_bound,
            "gap": res.gap,
            "nodes_explored": res.nodes_explored,
        }
    return doc


def _write_costs_csv(path: Path, rep: DesignReport) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["item", "amount"])
        writer.writerow(["transport", repr(rep.cost_transport)])
        writer.writerow(["capex", repr(rep.cost_capex)])
        writer.writerow(["opex", repr(rep.cost_opex)])
        writer.writerow(["penalty", repr(rep.cost_penalty)])
        writer.writerow(["revenue", repr(-rep.revenue)])
        writer.writerow(["total", repr(rep.total)])


def _write_series_csv(path: Path, rep: DesignReport) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "kind", "name", "value_per_day"])
        for name, series in sorted(rep.discharged_per_step.items()):
            for t, v in enumerate(series):
                writer.writerow([t, "discharged_kg", name, repr(v)])
        for name, series in sorted(rep.recovered_per_step.items()):
            for t, v in enumerate(series):
                writer.writerow([t, "recovered", name, repr(v)])


def render_layout(s: Scenario, d: Design) -> str:
    """Plain-text park map: cells in grid position with their generators
    and placements, then the charged pipework pairs and the flow list."""
    norths = sorted({c.north for c in s.topology.cells}, reverse=True)
    easts = sorted({c.east for c in s.topology.cells})
    by_pos = {(c.east, c.north): c for c in s.topology.cells}
    gen_at: dict[str, list[str]] = {}
    for st in s.streams:
        gen_at.setdefault(st.source_cell, []).append(st.id)
    placed_at: dict[str, dict[str, list[str]]] = {}
    for p in d.placements:
        placed_at.setdefault(p.cell, {}).setdefault(p.technology, []).append(p.stream)

    def cell_lines(c) -> list[str]:
        lines = [f"{c.id} ^{c.elevation:g}"]
        if c.id in gen_at:
            lines.append("gen " + ",".join(sorted(gen_at[c.id])))
        for m, js in sorted(placed_at.get(c.id, {}).items()):
            mark = "+" if s.technology(m).is_connector else ""
            lines.append(f"{m}{mark}({','.join(sorted(js))})")
        return lines

    boxes = {pos: cell_lines(c) for pos, c in by_pos.items()}
    height = max(len(b) for b in boxes.values())
    width = max(8, max(max(len(line) for line in b) for b in boxes.values()))
    out = io.StringIO()
    print(f"park {s.name}: north up, ^ is elevation, + marks connectors", file=out)
    sep = "+" + "+".join(["-" * (width + 2)] * len(easts)) + "+"
    for north in norths:
        print(sep, file=out)
        for row in range(height):
            cells_row = []
            for east in easts:
                box = boxes.get((east, north), [""])
                text = box[row] if row < len(box) else ""
                cells_row.append(f" {text:<{width}} ")
            print("|" + "|".join(cells_row) + "|", file=out)
    print(sep, file=out)

    print(f"pipe type: {', '.join(d.pipe_types) or '(none)'}", file=out)
    pathways = d.pathways if d.pathways is not None else derive_pathways(s, d)
    charged = [(a, b) for a, b in pathways if a != b]
    if charged:
        print("pipework:", file=out)
        for a, b in charged:
            dist = cell_distance(s.topology, a, b)
            cls = elevation_class(s.topology, a, b)
            print(f"  {a} -> {b}  {dist:.0f} m, class {cls:g}", file=out)
    if d.flows:
        print("flows (m3/day):", file=out)
        for (j, a, b, t), v in sorted(d.flows.items()):
            where = f"{a} -> {b}" if a != b else f"at {a}"
            print(f"  {j} {where}  {v:.6g}  step {t}", file=out)
    return out.getvalue()


def _emit_artifacts(
    out_dir: Path,
    s: Scenario,
    variant: str,
    seed: int,
    res: SolveResult | None,
    design: Design,
    rep: DesignReport,
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    formulation.save_design(design, out_dir / "design.json")
    doc = _report_doc(s, variant, seed, res, rep)
    (out_dir / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _write_costs_csv(out_dir / "costs.csv", rep)
    _write_series_csv(out_dir / "series.csv", rep)
    (out_dir / "layout.txt").write_text(render_layout(s, design))


def _run_manifest(manifest: RunManifest) -> tuple[Scenario, SolveResult, Design, DesignReport]:
    s = _load_scenario(manifest.scenario, manifest.variant)
    model, idx = build_model(s)
    if manifest.solver_cmd:
        res = solve_external(model, manifest.solver_cmd, options=manifest.options)
    else:
        res = solve_milp(model, manifest.options)
    if res.assignment is None:
        raise ScenarioError(f"no solution: solver status {res.status}")
    design = extract_design(
        s, idx, res.assignment, integrality_tol=manifest.options.integrality_tol
    )
    rep = evaluate_design(s, design, manifest.options.feasibility_tol)
    return s, res, design, rep


@click.group()
@click.version_option(package_name="parkflow")
def main() -> None:
    """Design optimization for shared wastewater treatment in
    eco-industrial parks."""


@main.command()
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--scenario", "scenario_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--variant", default=None, help="parameter overlay, see module help")
@click.option("--gap", type=float, default=None, help="relative optimality gap")
@click.option("--time-limit", type=float, default=None, help="seconds")
@click.option("--node-limit", type=int, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--solver-cmd", default=None, help="external solver command template")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
def solve(manifest_path, scenario_path, variant, gap, time_limit, node_limit,
          workers, solver_cmd, out_dir):
    """Solve a scenario and write design.json, report.json, costs.csv,
    layout.txt and series.csv to the output directory."""
    if bool(manifest_path) == bool(scenario_path):
        raise click.UsageError("pass exactly one of --manifest or --scenario")
    if manifest_path:
        try:
            manifest = load_manifest(manifest_path)
        except (ScenarioError, ValueError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
    else:
        manifest = RunManifest(
            scenario=scenario_path, variant=AS_GIVEN, name=Path(scenario_path).stem
        )
    if variant is not None:
        manifest.variant = variant
    _check_variant(manifest.variant)
    if gap is not None:
        manifest.options.rel_gap = gap
    if time_limit is not None:
        manifest.options.time_limit = time_limit
    if node_limit is not None:
        manifest.options.node_limit = node_limit
    if workers is not None:
        manifest.options.worker_count = workers
    if solver_cmd is not None:
        manifest.solver_cmd = solver_cmd
    if out_dir is not None:
        manifest.out_dir = out_dir

    try:
        s, res, design, rep = _run_manifest(manifest)
    except (ScenarioError, milp.ModelError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    _emit_artifacts(
        Path(manifest.out_dir), s, manifest.variant, manifest.seed, res, design, rep
    )
    click.echo(
        f"{res.status}: objective {res.objective!r}, bound {res.best_bound!r}, "
        f"gap {res.gap!r}, nodes {res.nodes_explored}"
    )
    if rep.violations:
        for v in rep.violations:
            click.echo(f"violation: {v}", err=True)
        sys.exit(1)
    if res.status not in ("optimal", "feasible"):
        sys.exit(1)


@main.command()
@click.option("--scenario", "scenario_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--variant", default=AS_GIVEN)
@click.option("--design", "design_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
def evaluate(scenario_path, variant, design_path, out_dir):
    """Evaluate a design file against a scenario; exit 0 iff feasible."""
    s = _load_scenario(scenario_path, variant)
    design = formulation.load_design(design_path)
    try:
        rep = evaluate_design(s, design)
    except ScenarioError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        doc = _report_doc(s, variant, 0, None, rep)
        (out / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        _write_costs_csv(out / "costs.csv", rep)
        _write_series_csv(out / "series.csv", rep)
        (out / "layout.txt").write_text(render_layout(s, design))
    click.echo(f"total {rep.total!r}")
    for key in ("transport", "capex", "opex", "penalty"):
        click.echo(f"  cost_{key} {getattr(rep, 'cost_' + key)!r}")
    click.echo(f"  revenue {rep.revenue!r}")
    for r, qty in sorted(rep.recovered.items()):
        click.echo(f"  recovered {r}: {qty!r}")
    if rep.violations:
        click.echo(f"{len(rep.violations)} violations:", err=True)
        for v in rep.violations:
            click.echo(f"  {v}", err=True)
        sys.exit(1)
    click.echo("feasible")


@main.command()
@click.argument("manifests", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
def compare(manifests, out_path):
    """Solve two or more manifests and tabulate costs, discharge and
    recovery side by side with relative deltas against the first row."""
    if len(manifests) < 2:
        raise click.UsageError("compare needs at least two manifests")
    rows = []
    failures = 0
    base_total = None
    for mpath in manifests:
        name = Path(mpath).stem
        try:
            manifest = load_manifest(mpath)
            _s, res, _design, rep = _run_manifest(manifest)
            if rep.violations:
                raise ScenarioError(f"{len(rep.violations)} violations")
            totals: dict[str, float] = {}
            for (j, p), v in rep.discharged.items():
                totals[p] = totals.get(p, 0.0) + v
            row = {
                "run": name,
                "status": res.status,
                "total": rep.total,
                "N_discharged_kg": totals.get("TN", 0.0),
                "P_discharged_kg": totals.get("TP", 0.0),
                "N_recovered": rep.recovered.get("N", 0.0),
                "P_recovered": rep.recovered.get("P", 0.0),
                "CH4_recovered": rep.recovered.get("CH4", 0.0),
            }
            if base_total is None:
                base_total = rep.total
                row["delta_total"] = ""
            elif base_total:
                row["delta_total"] = f"{(rep.total - base_total) / abs(base_total):+.2%}"
            else:
                row["delta_total"] = ""
        except (ScenarioError, milp.ModelError) as exc:
            failures += 1
            row = {
                "run": name, "status": f"failed: {exc}", "total": "",
                "N_discharged_kg": "", "P_discharged_kg": "", "N_recovered": "",
                "P_recovered": "", "CH4_recovered": "", "delta_total": "",
            }
        rows.append(row)

    headers = ["run", "status", "total", "delta_total", "N_discharged_kg",
               "P_discharged_kg", "N_recovered", "P_recovered", "CH4_recovered"]
    rendered = [
        [f"{row[h]:.6g}" if isinstance(row[h], float) else str(row[h]) for h in headers]
        for row in rows
    ]
    widths = [
        max(len(h), *(len(r[i]) for r in rendered)) for i, h in enumerate(headers)
    ]
    click.echo("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    for r in rendered:
        click.echo("  ".join(v.ljust(w) for v, w in zip(r, widths)))
    if out_path:
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(headers)
            for row in rows:
                writer.writerow([row[h] for h in headers])
    if failures:
        sys.exit(1)


@main.command("export-mps")
@click.option("--scenario", "scenario_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--variant", default=AS_GIVEN)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default="model.mps")
def export_mps(scenario_path, variant, out_path):
    """Write the scenario's MILP as an MPS file plus a name-table sidecar."""
    s = _load_scenario(scenario_path, variant)
    model, _idx = build_model(s)
    out = Path(out_path)
    if out.parent != Path("."):
        out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(milp.export_model(model))
    sidecar = out.with_suffix(out.suffix + ".names.tsv")
    sidecar.write_text(milp.name_table(model))
    click.echo(f"wrote {out} and {sidecar}")


@main.command()
@click.option("--scenario", "scenario_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
def validate(scenario_path):
    """Validate a scenario file; print problems and exit 1 on errors."""
    doc = json.loads(Path(scenario_path).read_text())
    try:
        s = scenario_from_dict(doc)
    except ScenarioError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    report = validate_scenario(s)
    for w in report.warnings:
        click.echo(f"warning: {w}")
    for e in report.errors:
        click.echo(f"error: {e}", err=True)
    if report.errors:
        sys.exit(1)
    click.echo(f"ok: {len(s.streams)} streams, {len(s.topology.cells)} cells, "
               f"{len(s.technologies)} technologies, {len(s.pipes)} pipe options")


if __name__ == "__main__":
    main()
