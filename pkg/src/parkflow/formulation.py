"""MILP formulation of the treatment siting and transport design problem.

Variable families, indexed over streams j, cells x, technologies m, pipe
options l and time steps t:

    fl[j,x,x',t]   continuous  flow of stream j from cell x to x', m3/day
    inflow[j,x,t]  continuous  total inflow of stream j into cell x
    treated[j,m,x,t] continuous  inflow consumed by technology m at x
                                 (product alpha * inflow via gadget)
    alpha[j,x,m]   binary      stream j is assigned to technology m at x
    upsilon[j,x]   binary      stream j has a treatment plant at x
    omega[x,m]     binary      technology m is built at x (capex driver)
    delta[l]       binary      pipe option l is the park-wide pipe type
    eps[j]         binary      stream j routes through a connector
    direct[j,x]    binary      plant for j at x and j has no connector
    kappa[j,x,x']  binary      connector for j at x feeding a plant at x'
    phi[x,x']      binary      pathway: generator cell to connector cell
    gamma[x,x']    binary      pathway: generator cell direct to plant
    pi[x,x']       binary      pathway: connector cell to plant cell
    partial[x,x']  binary      pipework present on the pair (phi|gamma|pi)
    pipe_use[l,x,x'] continuous  pipe option l charged on pair (x,x')

Self-arcs fl[j,x,x,t] model on-site treatment: they bypass the pipe
capacity rows and carry no pipe cost.  Indicator and product variables are
pinned by their gadget rows once alpha and delta are integral, so the
solver only branches on those two families.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import json
from pathlib import Path
from typing import Any

from parkflow import milp
from parkflow.milp import (
    BINARY,
    CONTINUOUS,
    GE,
    LE,
    LinExpr,
    MilpModel,
    Variable,
    add_indicator_link,
    add_product_bin_bin,
    add_product_bin_cont,
    complement,
)
from parkflow.park import (
    PipeOption,
    Scenario,
    ScenarioError,
    cell_distance,
    elevation_class,
)


class ExtractionError(ValueError):
    """Raised when a solver assignment cannot be read back as a Design."""


@dataclass(frozen=True)
class Placement:
    stream: str
    cell: str
    technology: str


@dataclass(frozen=True)
class Design:
    """A concrete design: technology placements per stream, the selected
    pipe type, the flow routing, and the charged pipework pairs.

    pathways=None means "derive from placements" (the normal case for
    hand-written design files)."""

    placements: tuple[Placement, ...]
    pipe_types: tuple[str, ...]
    flows: dict[tuple[str, str, str, int], float]
    pathways: tuple[tuple[str, str], ...] | None = None


def pipe_pair_cost(s: Scenario, pipe: PipeOption, a: str, b: str) -> float:
    """Pipework cost for one directed cell pair: (install + pump) for the
    pair's elevation class, times length in units of 100 m."""
    if a == b:
        return 0.0
    cls = elevation_class(s.topology, a, b)
    per_100m = pipe.install_cost_per_length[cls] + pipe.pump_cost_per_length[cls]
    return per_100m * cell_distance(s.topology, a, b) / 100.0


@dataclass
class VariableIndex:
    """Bijection between semantic keys and model variables, filled while
    the model is built.  Family sizes are closed-form in the scenario's
    set sizes; see expected_counts."""

    fl: dict[tuple[str, str, str, int], Variable] = field(default_factory=dict)
    inflow: dict[tuple[str, str, int], Variable] = field(default_factory=dict)
    treated: dict[tuple[str, str, str, int], Variable] = field(default_factory=dict)
    alpha: dict[tuple[str, str, str], Variable] = field(default_factory=dict)
    upsilon: dict[tuple[str, str], Variable] = field(default_factory=dict)
    omega: dict[tuple[str, str], Variable] = field(default_factory=dict)
    delta: dict[str, Variable] = field(default_factory=dict)
    eps: dict[str, Variable] = field(default_factory=dict)
    direct: dict[tuple[str, str], Variable] = field(default_factory=dict)
    kappa: dict[tuple[str, str, str], Variable] = field(default_factory=dict)
    phi: dict[tuple[str, str], Variable] = field(default_factory=dict)
    gamma: dict[tuple[str, str], Variable] = field(default_factory=dict)
    pi: dict[tuple[str, str], Variable] = field(default_factory=dict)
    partial: dict[tuple[str, str], Variable] = field(default_factory=dict)
    pipe_use: dict[tuple[str, str, str], Variable] = field(default_factory=dict)

    def families(self) -> dict[str, dict]:
        return {
            "fl": self.fl,
            "inflow": self.inflow,
            "treated": self.treated,
            "alpha": self.alpha,
            "upsilon": self.upsilon,
            "omega": self.omega,
            "delta": self.delta,
            "eps": self.eps,
            "direct": self.direct,
            "kappa": self.kappa,
            "phi": self.phi,
            "gamma": self.gamma,
            "pi": self.pi,
            "partial": self.partial,
            "pipe_use": self.pipe_use,
        }

    def counts(self) -> dict[str, int]:
        return {name: len(fam) for name, fam in self.families().items()}

    def total(self) -> int:
        return sum(self.counts().values())


def expected_counts(s: Scenario) -> dict[str, int]:
    """Closed-form family sizes implied by the scenario's set sizes."""
    J = len(s.streams)
    X = len(s.topology.cells)
    M = len(s.technologies)
    L = len(s.pipes)
    T = s.time_steps
    return {
        "fl": J * X * X * T,
        "inflow": J * X * T,
        "treated": J * M * X * T,
        "alpha": J * X * M,
        "upsilon": J * X,
        "omega": X * M,
        "delta": L,
        "eps": J,
        "direct": J * X,
        "kappa": J * X * X,
        "phi": X * X,
        "gamma": X * X,
        "pi": X * X,
        "partial": X * X,
        "pipe_use": L * X * X,
    }


def _conn_expr(s: Scenario, idx: VariableIndex, j: str, x: str) -> LinExpr:
    """Binary-valued expression: a connector is placed for stream j at x.
    Valid because at most one technology may be placed per (j, x)."""
    return LinExpr(
        terms=tuple((idx.alpha[j, x, m.id].id, 1.0) for m in s.connectors)
    )


def _plant_expr(s: Scenario, idx: VariableIndex, j: str, x: str) -> LinExpr:
    return LinExpr(
        terms=tuple((idx.alpha[j, x, m.id].id, 1.0) for m in s.plants)
    )


def _fl_upper(s: Scenario, j, x: str, y: str, t: int) -> float:
    flow = j.flow_profile[t]
    if x == y:
        return flow
    if not s.transport_enabled:
        return 0.0
    return min(flow, s.best_pipe_flow()) if s.pipes else 0.0


def _register_core_variables(model: MilpModel, s: Scenario, idx: VariableIndex) -> None:
    cells = s.topology.cell_ids
    for st in s.streams:
        for x in cells:
            for y in cells:
                for t in range(s.time_steps):
                    ub = _fl_upper(s, st, x, y, t)
                    idx.fl[st.id, x, y, t] = model.add_variable(
                        f"fl[{st.id},{x},{y},{t}]", CONTINUOUS, 0.0, ub
                    )
    for st in s.streams:
        for x in cells:
            for t in range(s.time_steps):
                ub = sum(_fl_upper(s, st, y, x, t) for y in cells)
                v = model.add_variable(f"inflow[{st.id},{x},{t}]", CONTINUOUS, 0.0, ub)
                idx.inflow[st.id, x, t] = v
                model.add_constraint(
                    [(v, 1.0)] + [(idx.fl[st.id, y, x, t], -1.0) for y in cells],
                    milp.EQ, 0.0, tag="inflow_def",
                )
    for st in s.streams:
        for x in cells:
            for m in s.technologies:
                idx.alpha[st.id, x, m.id] = model.add_variable(
                    f"alpha[{st.id},{x},{m.id}]", BINARY
                )
    for st in s.streams:
        for x in cells:
            # one technology per stream and cell
            model.add_constraint(
                [(idx.alpha[st.id, x, m.id], 1.0) for m in s.technologies],
                LE, 1.0, tag="single_tech",
            )


def build_treatment_block(model: MilpModel, s: Scenario, idx: VariableIndex) -> None:
    """Removal and capacity: alpha*inflow products, plant capacity, removal
    bounded by generation, and the presence indicators upsilon/omega."""
    cells = s.topology.cell_ids
    for st in s.streams:
        for m in s.technologies:
            for x in cells:
                for t in range(s.time_steps):
                    inflow = idx.inflow[st.id, x, t]
                    a = idx.alpha[st.id, x, m.id]
                    w = add_product_bin_cont(
                        model, a, inflow, inflow.upper,
                        name=f"treated[{st.id},{m.id},{x},{t}]",
                    )
                    idx.treated[st.id, m.id, x, t] = w
                    # a treatment plant can only ever see the stream's own
                    # generated volume; connectors may relay arbitrary loops
                    tight = st.flow_profile[t] if not m.is_connector else inflow.upper
                    if m.capacity is not None:
                        tight = min(tight, m.capacity)
                    if tight < inflow.upper:
                        model.add_constraint(
                            [(w, 1.0), (a, -tight)], LE, 0.0, tag="treat_cap"
                        )

    for m in s.technologies:
        if m.capacity is None:
            continue
        for x in cells:
            for t in range(s.time_steps):
                model.add_constraint(
                    [(idx.treated[st.id, m.id, x, t], 1.0) for st in s.streams],
                    LE, m.capacity, tag="capacity",
                )

    # removal cannot exceed generation (equivalently: discharge >= 0)
    for st in s.streams:
        for p, conc in st.composition.items():
            if conc <= 0:
                continue
            for t in range(s.time_steps):
                terms = [
                    (idx.treated[st.id, m.id, x, t], m.removal_eff.get(p, 0.0))
                    for m in s.plants
                    for x in cells
                    if m.removal_eff.get(p, 0.0) > 0
                ]
                if terms:
                    model.add_constraint(
                        terms, LE, st.flow_profile[t], tag="mass_cap"
                    )

    for st in s.streams:
        for x in cells:
            y = model.add_variable(f"upsilon[{st.id},{x}]", BINARY)
            idx.upsilon[st.id, x] = y
            xs = [idx.alpha[st.id, x, m.id] for m in s.plants]
            if xs:
                add_indicator_link(model, y, xs, tag="upsilon")
            else:
                model.fix_variable(y, 0.0)
    for x in cells:
        for m in s.technologies:
            y = model.add_variable(f"omega[{x},{m.id}]", BINARY)
            idx.omega[x, m.id] = y
            xs = [idx.alpha[st.id, x, m.id] for st in s.streams]
            if xs:
                add_indicator_link(model, y, xs, tag="omega")
            else:
                model.fix_variable(y, 0.0)


def build_transport_block(model: MilpModel, s: Scenario, idx: VariableIndex) -> None:
    """Flow balance with connector relay logic, the park-wide pipe type
    selection with per-cell outflow capacity, and the pathway indicators."""
    cells = s.topology.cell_ids
    source = {st.id: st.source_cell for st in s.streams}
    has_conn = bool(s.connectors)

    for l in s.pipes:
        idx.delta[l.id] = model.add_variable(f"delta[{l.id}]", BINARY)
    if s.pipes:
        model.add_constraint(
            [(idx.delta[l.id], 1.0) for l in s.pipes], milp.EQ, 1.0, tag="one_pipe"
        )

    # per-cell outbound flow must fit the selected pipe (self-arcs exempt)
    for x in cells:
        for t in range(s.time_steps):
            terms = [
                (idx.fl[st.id, x, y, t], 1.0)
                for st in s.streams
                for y in cells
                if y != x
            ]
            if not terms:
                continue
            terms += [(idx.delta[l.id], -l.max_flow) for l in s.pipes]
            model.add_constraint(terms, LE, 0.0, tag="pipe_cap")

    # a cell's outflow is limited to what its connector relays plus what
    # the cell generates; all flow into a connector must flow out again
    for st in s.streams:
        if not any(c > 0 for c in st.composition.values()):
            continue
        for x in cells:
            for t in range(s.time_steps):
                gen = st.flow_profile[t] if source[st.id] == x else 0.0
                out_terms = [(idx.fl[st.id, x, y, t], 1.0) for y in cells]
                relay = [
                    (idx.treated[st.id, m.id, x, t], -1.0) for m in s.connectors
                ]
                model.add_constraint(out_terms + relay, LE, gen, tag="balance")
                if has_conn:
                    model.add_constraint(
                        [(idx.treated[st.id, m.id, x, t], 1.0) for m in s.connectors]
                        + [(idx.fl[st.id, x, y, t], -1.0) for y in cells],
                        LE, 0.0, tag="throughflow",
                    )

    for st in s.streams:
        y = model.add_variable(f"eps[{st.id}]", BINARY)
        idx.eps[st.id] = y
        add_indicator_link(
            model, y, [_conn_expr(s, idx, st.id, x) for x in cells], tag="eps"
        )

    for st in s.streams:
        for x in cells:
            idx.direct[st.id, x] = add_product_bin_bin(
                model,
                idx.upsilon[st.id, x],
                complement(idx.eps[st.id]),
                name=f"direct[{st.id},{x}]",
            )

    for st in s.streams:
        for x in cells:
            for y in cells:
                idx.kappa[st.id, x, y] = add_product_bin_bin(
                    model,
                    _conn_expr(s, idx, st.id, x),
                    _plant_expr(s, idx, st.id, y),
                    name=f"kappa[{st.id},{x},{y}]",
                )

    for x in cells:
        for y in cells:
            phi = model.add_variable(f"phi[{x},{y}]", BINARY)
            idx.phi[x, y] = phi
            elems = [
                _conn_expr(s, idx, st.id, y) for st in s.streams if source[st.id] == x
            ]
            if elems:
                add_indicator_link(model, phi, elems, tag="phi")
            else:
                model.fix_variable(phi, 0.0)

            gam = model.add_variable(f"gamma[{x},{y}]", BINARY)
            idx.gamma[x, y] = gam
            elems = [idx.direct[st.id, y] for st in s.streams if source[st.id] == x]
            if elems:
                add_indicator_link(model, gam, elems, tag="gamma")
            else:
                model.fix_variable(gam, 0.0)

            pik = model.add_variable(f"pi[{x},{y}]", BINARY)
            idx.pi[x, y] = pik
            add_indicator_link(
                model, pik, [idx.kappa[st.id, x, y] for st in s.streams], tag="pi"
            )

            par = model.add_variable(f"partial[{x},{y}]", BINARY)
            idx.partial[x, y] = par
            add_indicator_link(
                model, par, [idx.phi[x, y], idx.gamma[x, y], idx.pi[x, y]], tag="partial"
            )


def build_objective(model: MilpModel, s: Scenario, idx: VariableIndex) -> None:
    """Total cost: pipework + capital + operation + discharge penalties
    minus recovered-resource revenue.  Per-step quantities are daily rates
    weighted by step_duration; capital and pipework are charged once."""
    cells = s.topology.cell_ids
    dur = s.step_duration
    eco = s.economics

    for l in s.pipes:
        for x in cells:
            for y in cells:
                cost = pipe_pair_cost(s, l, x, y)
                q = model.add_variable(
                    f"pipe_use[{l.id},{x},{y}]", CONTINUOUS, 0.0,
                    0.0 if cost <= 0 else 1.0,
                )
                idx.pipe_use[l.id, x, y] = q
                if cost > 0:
                    # q >= delta + partial - 1; minimization pins q to the
                    # product wherever it is charged
                    model.add_constraint(
                        [(q, -1.0), (idx.delta[l.id], 1.0), (idx.partial[x, y], 1.0)],
                        LE, 1.0, tag="pipe_choice",
                    )
                    model.add_objective(q, cost)

    for x in cells:
        for m in s.technologies:
            if m.capex:
                model.add_objective(idx.omega[x, m.id], m.capex)

    for st in s.streams:
        for m in s.technologies:
            if not m.opex:
                continue
            for x in cells:
                for t in range(s.time_steps):
                    model.add_objective(idx.treated[st.id, m.id, x, t], m.opex * dur)

    for st in s.streams:
        for p, conc in st.composition.items():
            pen = eco.discharge_penalty.get(p, 0.0)
            if pen <= 0 or conc <= 0:
                continue
            for t in range(s.time_steps):
                model.add_objective_constant(pen * st.flow_profile[t] * conc * dur)
                for m in s.plants:
                    y = m.removal_eff.get(p, 0.0)
                    if y <= 0:
                        continue
                    for x in cells:
                        model.add_objective(
                            idx.treated[st.id, m.id, x, t], -pen * conc * y * dur
                        )

    if eco.resource_price and eco.price_factor > 0:
        for st in s.streams:
            for m in s.plants:
                for r, by_comp in m.recovery_map.items():
                    price = eco.resource_price.get(r, 0.0) * eco.price_factor
                    if price <= 0:
                        continue
                    for p, yield_per_kg in by_comp.items():
                        conc = st.composition.get(p, 0.0)
                        removal = m.removal_eff.get(p, 0.0)
                        value = price * yield_per_kg * conc * removal * dur
                        if value == 0:
                            continue
                        for x in cells:
                            for t in range(s.time_steps):
                                model.add_objective(
                                    idx.treated[st.id, m.id, x, t], -value
                                )

    # park-wide discharge limits per component and step
    for p, limits in eco.discharge_limit.items():
        for t in range(s.time_steps):
            total_gen = sum(
                st.flow_profile[t] * st.composition.get(p, 0.0) for st in s.streams
            )
            terms = []
            for st in s.streams:
                conc = st.composition.get(p, 0.0)
                if conc <= 0:
                    continue
                for m in s.plants:
                    y = m.removal_eff.get(p, 0.0)
                    if y <= 0:
                        continue
                    for x in cells:
                        terms.append((idx.treated[st.id, m.id, x, t], conc * y))
            model.add_constraint(
                terms, GE, total_gen - limits[t], tag="discharge_limit"
            )


def build_model(s: Scenario) -> tuple[MilpModel, VariableIndex]:
    """Build the complete MILP for a validated scenario."""
    if s.transport_enabled and not s.pipes:
        raise ScenarioError("transport is enabled but the scenario has no pipe options")
    model = MilpModel(name=s.name)
    idx = VariableIndex()
    _register_core_variables(model, s, idx)
    build_treatment_block(model, s, idx)
    build_transport_block(model, s, idx)
    build_objective(model, s, idx)
    model.canonicalize()
    return model, idx


# --- design extraction and serialization ------------------------------------


def extract_design(
    s: Scenario,
    idx: VariableIndex,
    assignment: dict[int, float],
    integrality_tol: float = 1e-6,
    verify: bool = True,
) -> Design:
    """Read a solver assignment back into a Design.

    Binaries are rounded at 0.5 but any value farther than integrality_tol
    from an integer is an error; with verify=True the result is re-checked
    through the evaluator and violations raise ExtractionError.
    """
    binary_families = (
        "alpha", "upsilon", "omega", "delta", "eps",
        "direct", "kappa", "phi", "gamma", "pi", "partial",
    )
    offenders = []
    for fam_name in binary_families:
        for key, var in idx.families()[fam_name].items():
            v = assignment.get(var.id, 0.0)
            if abs(v - round(v)) > integrality_tol:
                offenders.append(f"{var.name}={v!r}")
    if offenders:
        raise ExtractionError(
            "assignment is not integral: " + ", ".join(offenders[:10])
        )

    placements = tuple(
        Placement(stream=j, cell=x, technology=m)
        for (j, x, m), var in idx.alpha.items()
        if round(assignment.get(var.id, 0.0)) == 1
    )
    pipe_types = tuple(
        l for l, var in idx.delta.items() if round(assignment.get(var.id, 0.0)) == 1
    )
    flows = {}
    for key, var in idx.fl.items():
        v = assignment.get(var.id, 0.0)
        if v > 1e-7:
            flows[key] = v
    pathways = tuple(
        sorted(
            pair
            for pair, var in idx.partial.items()
            if round(assignment.get(var.id, 0.0)) == 1
        )
    )
    design = Design(
        placements=placements, pipe_types=pipe_types, flows=flows, pathways=pathways
    )
    if verify:
        from parkflow.evaluator import check_feasibility

        violations = check_feasibility(s, design)
        if violations:
            raise ExtractionError(
                "extracted design violates the scenario constraints: "
                + "; ".join(str(v) for v in violations[:10])
            )
    return design


def design_to_dict(d: Design) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "schema_version": 1,
        "placements": [
            {"stream": p.stream, "cell": p.cell, "technology": p.technology}
            for p in sorted(d.placements, key=lambda p: (p.stream, p.cell, p.technology))
        ],
        "pipe_types": list(d.pipe_types),
        "flows": [
            {"stream": j, "from": a, "to": b, "step": t, "m3_per_day": v}
            for (j, a, b, t), v in sorted(d.flows.items())
        ],
    }
    if d.pathways is not None:
        doc["pathways"] = [list(pair) for pair in d.pathways]
    return doc


def design_from_dict(doc: dict[str, Any]) -> Design:
    flows = {}
    for f in doc.get("flows", []):
        key = (str(f["stream"]), str(f["from"]), str(f["to"]), int(f.get("step", 0)))
        flows[key] = flows.get(key, 0.0) + float(f["m3_per_day"])
    pathways = doc.get("pathways")
    if pathways is not None:
        pathways = tuple(sorted((str(a), str(b)) for a, b in pathways))
    pipe_types = doc.get("pipe_types", [])
    if isinstance(pipe_types, str):
        pipe_types = [pipe_types]
    return Design(
        placements=tuple(
            Placement(
                stream=str(p["stream"]),
                cell=str(p["cell"]),
                technology=str(p["technology"]),
            )
            for p in doc.get("placements", [])
        ),
        pipe_types=tuple(str(l) for l in pipe_types),
        flows=flows,
        pathways=pathways,
    )


def load_design(path: str | Path) -> Design:
    return design_from_dict(json.loads(Path(path).read_text()))


def save_design(d: Design, path: str | Path) -> None:
    Path(path).write_text(json.dumps(design_to_dict(d), indent=2, sort_keys=True) + "\n")
