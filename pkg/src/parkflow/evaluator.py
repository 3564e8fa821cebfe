"""Independent design evaluation: direct arithmetic, no MILP machinery.

evaluate_design recomputes removal, recovery, discharge and all cost terms
of a fixed Design straight from the scenario tables, and audits the design
against every constraint family.  It deliberately shares no code with the
formulation module (pipe costs are recomputed from the cost schedule here)
so a bug on either side shows up as a solver/oracle disagreement.

Semantics mirrored from the optimization model:

  * a placement (j, x, m) treats the entire inflow of stream j at cell x;
  * connectors relay their inflow onward, plants terminate it;
  * waste not routed into any plant is discharged where it ends up, and
    only the discharge totals matter economically;
  * pipework is charged on placement-derived pathways (source cell to
    connector, connector to plant, or source to plant when the stream has
    no connector), not on individual flow arcs.

Quantities are daily rates per step; reports aggregate over the horizon
by step_duration.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import itertools
import math

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from parkflow.formulation import Design, Placement
from parkflow.park import (
    Scenario,
    ScenarioError,
    cell_distance,
    elevation_class,
)


@dataclass(frozen=True)
class Violation:
    family: str
    location: str
    magnitude: float

    def __str__(self) -> str:
        return f"{self.family} at {self.location}: {self.magnitude:.6g}"


@dataclass
class DesignReport:
    """Horizon totals for one design.  total = cost_transport + cost_capex
    + cost_opex + cost_penalty - revenue.  discharged is keyed by
    (stream, component) in kg over the horizon; recovered by resource.
    Values within solver tolerance of zero are kept as computed so the
    conservation identity discharged + removed = generated stays exact."""

    cost_transport: float = 0.0
    cost_capex: float = 0.0
    cost_opex: float = 0.0
    cost_penalty: float = 0.0
    revenue: float = 0.0
    total: float = 0.0
    discharged: dict[tuple[str, str], float] = field(default_factory=dict)
    recovered: dict[str, float] = field(default_factory=dict)
    # daily rates per time step, keyed by component / resource
    discharged_per_step: dict[str, tuple[float, ...]] = field(default_factory=dict)
    recovered_per_step: dict[str, tuple[float, ...]] = field(default_factory=dict)
    violations: list[Violation] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)


def derive_pathways(s: Scenario, d: Design) -> tuple[tuple[str, str], ...]:
    """Charged pipework pairs implied by the placements alone: for every
    stream, source cell to each of its connector cells; each connector
    cell to each plant cell; source straight to plant when the stream has
    no connector anywhere."""
    conn_cells: dict[str, set[str]] = {}
    plant_cells: dict[str, set[str]] = {}
    for p in d.placements:
        bucket = conn_cells if s.technology(p.technology).is_connector else plant_cells
        bucket.setdefault(p.stream, set()).add(p.cell)
    pairs: set[tuple[str, str]] = set()
    for st in s.streams:
        src = st.source_cell
        if st.id in conn_cells:
            for xc in conn_cells[st.id]:
                pairs.add((src, xc))
                for xp in plant_cells.get(st.id, ()):
                    pairs.add((xc, xp))
        else:
            for xp in plant_cells.get(st.id, ()):
                pairs.add((src, xp))
    return tuple(sorted(pairs))


def _pipework_cost(s: Scenario, pipe_id: str, a: str, b: str) -> float:
    # recomputed from the schedule on purpose; see module docstring
    if a == b:
        return 0.0
    pipe = s.pipe(pipe_id)
    cls = elevation_class(s.topology, a, b)
    rate = pipe.install_cost_per_length[cls] + pipe.pump_cost_per_length[cls]
    return rate * cell_distance(s.topology, a, b) / 100.0


def _check_references(s: Scenario, d: Design) -> None:
    cells = set(s.topology.cell_ids)
    stream_ids = {st.id for st in s.streams}
    tech_ids = {m.id for m in s.technologies}
    pipe_ids = {l.id for l in s.pipes}
    for p in d.placements:
        if p.stream not in stream_ids:
            raise ScenarioError(f"placement references unknown stream {p.stream!r}")
        if p.cell not in cells:
            raise ScenarioError(f"placement references unknown cell {p.cell!r}")
        if p.technology not in tech_ids:
            raise ScenarioError(
                f"placement references unknown technology {p.technology!r}"
            )
    for l in d.pipe_types:
        if l not in pipe_ids:
            raise ScenarioError(f"design references unknown pipe type {l!r}")
    for (j, a, b, t) in d.flows:
        if j not in stream_ids:
            raise ScenarioError(f"flow references unknown stream {j!r}")
        if a not in cells or b not in cells:
            raise ScenarioError(f"flow references unknown cell {a!r} or {b!r}")
        if not (0 <= t < s.time_steps):
            raise ScenarioError(f"flow references step {t} outside the horizon")
    if d.pathways:
        for a, b in d.pathways:
            if a not in cells or b not in cells:
                raise ScenarioError(f"pathway references unknown cell {a!r} or {b!r}")


def evaluate_design(
    s: Scenario, d: Design, feasibility_tol: float = 1e-7
) -> DesignReport:
    """Evaluate a design; never optimizes, never repairs.

    Violation magnitudes are in natural units: m³/day for flow and
    capacity families, kg/day for mass families.
    """
    _check_references(s, d)
    report = DesignReport()
    cells = s.topology.cell_ids
    dur = s.step_duration
    eco = s.economics

    placed: dict[tuple[str, str], list[str]] = {}
    for p in d.placements:
        placed.setdefault((p.stream, p.cell), []).append(p.technology)
    for (j, x), techs in sorted(placed.items()):
        if len(techs) > 1:
            report.violations.append(
                Violation("single_tech", f"{j}@{x}", float(len(techs) - 1))
            )

    for key, v in d.flows.items():
        if v < -feasibility_tol:
            report.violations.append(
                Violation("flow", "{}:{}->{} t{}".format(*key), -v)
            )

    def tol(scale: float) -> float:
        return feasibility_tol * max(1.0, abs(scale))

    # per-step flow bookkeeping
    inflow: dict[tuple[str, str, int], float] = {}
    outflow: dict[tuple[str, str, int], float] = {}
    for (j, a, b, t), v in d.flows.items():
        inflow[j, b, t] = inflow.get((j, b, t), 0.0) + v
        outflow[j, a, t] = outflow.get((j, a, t), 0.0) + v

    if not s.transport_enabled:
        for (j, a, b, t), v in sorted(d.flows.items()):
            if a != b and v > tol(v):
                report.violations.append(
                    Violation("transport", f"{j}:{a}->{b} t{t}", v)
                )

    # treated volume per (stream, cell, technology, step)
    treated: dict[tuple[str, str, str, int], float] = {}
    for (j, x), techs in placed.items():
        for m in techs:
            for t in range(s.time_steps):
                treated[j, x, m, t] = inflow.get((j, x, t), 0.0)

    conn_at: dict[tuple[str, str], bool] = {}
    for (j, x), techs in placed.items():
        conn_at[j, x] = any(s.technology(m).is_connector for m in techs)

    # balance and throughflow, mirroring the model: skipped for streams
    # with no positive concentration (their rows are vacuous)
    for st in s.streams:
        if not any(c > 0 for c in st.composition.values()):
            report.notes.append(
                f"balance not applicable to zero-composition stream {st.id}"
            )
            continue
        for x in cells:
            relaying = conn_at.get((st.id, x), False)
            for t in range(s.time_steps):
                gen = st.flow_profile[t] if st.source_cell == x else 0.0
                out = outflow.get((st.id, x, t), 0.0)
                arrived = inflow.get((st.id, x, t), 0.0)
                relay = arrived if relaying else 0.0
                if out > gen + relay + tol(gen + relay):
                    report.violations.append(
                        Violation("balance", f"{st.id}@{x} t{t}", out - gen - relay)
                    )
                if relaying and arrived > out + tol(arrived):
                    report.violations.append(
                        Violation("throughflow", f"{st.id}@{x} t{t}", arrived - out)
                    )

    # plant and connector capacity
    for m in s.technologies:
        if m.capacity is None:
            continue
        for x in cells:
            for t in range(s.time_steps):
                load = sum(
                    treated.get((st.id, x, m.id, t), 0.0) for st in s.streams
                )
                if load > m.capacity + tol(m.capacity):
                    report.violations.append(
                        Violation("capacity", f"{m.id}@{x} t{t}", load - m.capacity)
                    )

    # park-wide pipe selection and per-cell outbound flow limit
    if len(d.pipe_types) > 1:
        report.violations.append(
            Violation("pipe_type", ",".join(d.pipe_types), float(len(d.pipe_types) - 1))
        )
    flmax = max((s.pipe(l).max_flow for l in d.pipe_types), default=0.0)
    for x in cells:
        for t in range(s.time_steps):
            cross = sum(
                v
                for (j, a, b, tt), v in d.flows.items()
                if a == x and b != x and tt == t
            )
            if cross > flmax + tol(flmax):
                report.violations.append(
                    Violation("pipe_capacity", f"{x} t{t}", cross - flmax)
                )

    # removal, discharge, recovery
    removed: dict[tuple[str, str, int], float] = {}
    rec_step: dict[str, list[float]] = {}
    for (j, x, m, t), vol in treated.items():
        tech = s.technology(m)
        st = s.stream(j)
        for p, eff in tech.removal_eff.items():
            conc = st.composition.get(p, 0.0)
            if conc <= 0 or eff <= 0:
                continue
            removed[j, p, t] = removed.get((j, p, t), 0.0) + vol * conc * eff
        for r, by_comp in tech.recovery_map.items():
            for p, yield_per_kg in by_comp.items():
                conc = st.composition.get(p, 0.0)
                eff = tech.removal_eff.get(p, 0.0)
                if conc <= 0 or eff <= 0 or yield_per_kg == 0:
                    continue
                report.recovered[r] = (
                    report.recovered.get(r, 0.0) + vol * conc * eff * yield_per_kg * dur
                )
                per_step = rec_step.setdefault(r, [0.0] * s.time_steps)
                per_step[t] += vol * conc * eff * yield_per_kg

    dis_by_comp: dict[tuple[str, int], float] = {}
    for st in s.streams:
        for p, conc in st.composition.items():
            if conc <= 0:
                continue
            for t in range(s.time_steps):
                gen = st.flow_profile[t] * conc
                dis = gen - removed.get((st.id, p, t), 0.0)
                if dis < -tol(gen):
                    report.violations.append(
                        Violation("conservation", f"{st.id}/{p} t{t}", -dis)
                    )
                key = (st.id, p)
                report.discharged[key] = report.discharged.get(key, 0.0) + dis * dur
                dis_by_comp[p, t] = dis_by_comp.get((p, t), 0.0) + dis

    report.discharged_per_step = {
        p: tuple(dis_by_comp.get((p, t), 0.0) for t in range(s.time_steps))
        for p in sorted({p for (p, _t) in dis_by_comp})
    }
    report.recovered_per_step = {r: tuple(v) for r, v in sorted(rec_step.items())}

    for p, limits in eco.discharge_limit.items():
        for t in range(s.time_steps):
            total = dis_by_comp.get((p, t), 0.0)
            if total > limits[t] + tol(limits[t]):
                report.violations.append(
                    Violation("discharge_limit", f"{p} t{t}", total - limits[t])
                )

    # pathway audit: declared pairs must match the placement-derived set
    derived = derive_pathways(s, d)
    if d.pathways is not None and tuple(sorted(d.pathways)) != derived:
        diff = set(d.pathways) ^ set(derived)
        report.violations.append(
            Violation("pathway", ";".join(f"{a}->{b}" for a, b in sorted(diff)),
                      float(len(diff)))
        )
    else:
        report.notes.append("pathways derived from placements")

    # costs
    report.cost_transport = sum(
        _pipework_cost(s, l, a, b) for l in d.pipe_types for a, b in derived
    )
    report.cost_capex = sum(
        s.technology(m).capex for (x, m) in {(p.cell, p.technology) for p in d.placements}
    )
    report.cost_opex = sum(
        vol * s.technology(m).opex * dur for (j, x, m, t), vol in treated.items()
    )
    report.cost_penalty = sum(
        eco.discharge_penalty.get(p, 0.0) * dis * dur
        for (p, t), dis in dis_by_comp.items()
    )
    report.revenue = sum(
        eco.resource_price.get(r, 0.0) * eco.price_factor * qty
        for r, qty in report.recovered.items()
    )
    report.total = (
        report.cost_transport
        + report.cost_capex
        + report.cost_opex
        + report.cost_penalty
        - report.revenue
    )
    return report


def check_feasibility(
    s: Scenario, d: Design, feasibility_tol: float = 1e-7
) -> list[Violation]:
    """Empty list iff the design satisfies every model constraint at
    feasibility_tol.  Reference errors are reported, not raised."""
    try:
        return evaluate_design(s, d, feasibility_tol).violations
    except ScenarioError as exc:
        return [Violation("reference", str(exc), 0.0)]


# --- exhaustive oracle --------------------------------------------------------


def _pattern_flow_lp(s, pattern, pipe_id, t):
    """LP over the flow variables of one step for a fixed placement
    pattern: minimize opex minus penalty savings minus revenue.  Returns
    (objective contribution, flows dict) or None if infeasible."""
    cells = s.topology.cell_ids
    cross_ok = s.transport_enabled and pipe_id is not None
    arcs = [
        (a, b) for a in cells for b in cells if a == b or cross_ok
    ]
    var: dict[tuple[str, str, str], int] = {}
    lb, ub, cost = [], [], []
    best_pipe = s.pipe(pipe_id).max_flow if pipe_id is not None else 0.0
    dur = s.step_duration
    eco = s.economics

    def rate(st, m):
        # objective per m3 treated by m: operation minus penalty savings
        # minus resource revenue
        value = m.opex
        for p, conc in st.composition.items():
            eff = m.removal_eff.get(p, 0.0)
            if conc <= 0 or eff <= 0:
                continue
            value -= eco.discharge_penalty.get(p, 0.0) * conc * eff
            for r, by_comp in m.recovery_map.items():
                y = by_comp.get(p, 0.0)
                value -= eco.resource_price.get(r, 0.0) * eco.price_factor * y * conc * eff
        return value * dur

    rates = {}
    for st in s.streams:
        for x in cells:
            m = pattern.get((st.id, x))
            rates[st.id, x] = rate(st, s.technology(m)) if m else 0.0
    for st in s.streams:
        flow = st.flow_profile[t]
        for a, b in arcs:
            var[st.id, a, b] = len(lb)
            lb.append(0.0)
            ub.append(flow if a == b else min(flow, best_pipe))
            cost.append(rates[st.id, b])

    rows_ub, rhs_ub = [], []

    def add_row(terms, rhs):
        rows_ub.append(terms)
        rhs_ub.append(rhs)

    for st in s.streams:
        if not any(c > 0 for c in st.composition.values()):
            continue
        for x in cells:
            m = pattern.get((st.id, x))
            relaying = m is not None and s.technology(m).is_connector
            gen = st.flow_profile[t] if st.source_cell == x else 0.0
            out = [(var[st.id, x, b], 1.0) for b in cells if (st.id, x, b) in var]
            arrived = [(var[st.id, a, x], 1.0) for a in cells if (st.id, a, x) in var]
            if relaying:
                add_row(out + [(i, -c) for i, c in arrived], gen)
                add_row(arrived + [(i, -c) for i, c in out], 0.0)
            else:
                add_row(out, gen)

    for m in s.technologies:
        if m.capacity is None:
            continue
        for x in cells:
            terms = [
                (var[st.id, a, x], 1.0)
                for st in s.streams
                if pattern.get((st.id, x)) == m.id
                for a in cells
                if (st.id, a, x) in var
            ]
            if terms:
                add_row(terms, m.capacity)

    if cross_ok:
        for x in cells:
            terms = [
                (var[st.id, x, b], 1.0)
                for st in s.streams
                for b in cells
                if b != x and (st.id, x, b) in var
            ]
            if terms:
                add_row(terms, best_pipe)

    # removal cannot exceed generation, and discharge limits
    for st in s.streams:
        for p, conc in st.composition.items():
            if conc <= 0:
                continue
            terms = []
            for x in cells:
                m = pattern.get((st.id, x))
                if m is None:
                    continue
                eff = s.technology(m).removal_eff.get(p, 0.0)
                if eff <= 0:
                    continue
                for a in cells:
                    if (st.id, a, x) in var:
                        terms.append((var[st.id, a, x], conc * eff))
            if terms:
                add_row(terms, st.flow_profile[t] * conc)
    for p, limits in eco.discharge_limit.items():
        total_gen = sum(
            st.flow_profile[t] * st.composition.get(p, 0.0) for st in s.streams
        )
        terms = []
        for st in s.streams:
            conc = st.composition.get(p, 0.0)
            if conc <= 0:
                continue
            for x in cells:
                m = pattern.get((st.id, x))
                if m is None:
                    continue
                eff = s.technology(m).removal_eff.get(p, 0.0)
                if eff <= 0:
                    continue
                for a in cells:
                    if (st.id, a, x) in var:
                        terms.append((var[st.id, a, x], -conc * eff))
        add_row(terms, limits[t] - total_gen)

    n = len(lb)
    if rows_ub:
        data, ri, ci = [], [], []
        for i, terms in enumerate(rows_ub):
            acc: dict[int, float] = {}
            for vid, coef in terms:
                acc[vid] = acc.get(vid, 0.0) + coef
            for vid, coef in acc.items():
                ri.append(i)
                ci.append(vid)
                data.append(coef)
        A = sparse.csc_array((data, (ri, ci)), shape=(len(rows_ub), n))
        res = linprog(
            np.array(cost), A_ub=A, b_ub=np.array(rhs_ub),
            bounds=np.column_stack((lb, ub)), method="highs-ds",
        )
    else:
        res = linprog(
            np.array(cost), bounds=np.column_stack((lb, ub)), method="highs-ds"
        )
    if res.status == 2:
        return None
    if res.status != 0:
        raise ScenarioError(f"flow subproblem failed with status {res.status}")
    flows = {
        (j, a, b): float(v)
        for (j, a, b), i in var.items()
        if (v := res.x[i]) > 1e-9
    }
    return float(res.fun), flows


def brute_force_optimum(
    s: Scenario,
    flow_grid: int | None = None,
    max_evaluations: int = 10_000_000,
) -> tuple[Design, float]:
    """Exhaustive search over placement patterns and pipe choices, flows by
    a per-pattern LP (or on a uniform grid of flow_grid+1 levels per arc
    when given; grid mode searches connector-free designs only).

    Patterns in which a stream has connectors but no plant are skipped:
    dropping such connectors never costs anything, so the optimum value is
    unaffected.  Refuses instances estimated above max_evaluations.
    """
    cells = s.topology.cell_ids
    streams = s.streams
    pipe_choices = [l.id for l in s.pipes] or [None]
    slots = [(st.id, x) for st in streams for x in cells]
    per_slot = len(s.technologies) + 1
    estimate = float(per_slot) ** len(slots) * len(pipe_choices)
    if flow_grid is not None:
        estimate *= float(flow_grid + 1) ** len(slots)
    if estimate > max_evaluations:
        raise ValueError(
            f"instance too large for exhaustive search: about {estimate:.3g} "
            f"evaluations exceeds the limit of {max_evaluations:.3g}"
        )

    choice_lists = []
    for st_id, x in slots:
        st = s.stream(st_id)
        opts: list[str | None] = [None]
        if s.transport_enabled or x == st.source_cell:
            opts += [m.id for m in s.technologies]
        choice_lists.append(opts)

    penalty_const = sum(
        s.economics.discharge_penalty.get(p, 0.0)
        * st.flow_profile[t]
        * st.composition.get(p, 0.0)
        * s.step_duration
        for st in streams
        for p in st.composition
        for t in range(s.time_steps)
    )

    best: tuple[float, Design] | None = None
    for combo in itertools.product(*choice_lists):
        pattern = {
            slot: m for slot, m in zip(slots, combo) if m is not None
        }
        skip = False
        for st in streams:
            has_conn = any(
                s.technology(m).is_connector
                for (j, x), m in pattern.items()
                if j == st.id
            )
            has_plant = any(
                not s.technology(m).is_connector
                for (j, x), m in pattern.items()
                if j == st.id
            )
            if has_conn and not has_plant:
                skip = True
                break
        if skip:
            continue
        if flow_grid is not None and any(
            s.technology(m).is_connector for m in pattern.values()
        ):
            continue

        placements = tuple(
            Placement(stream=j, cell=x, technology=m)
            for (j, x), m in sorted(pattern.items())
        )
        capex = sum(
            s.technology(m).capex
            for (x, m) in {(x, m) for (j, x), m in pattern.items()}
        )
        for pipe_id in pipe_choices:
            design_base = Design(
                placements=placements,
                pipe_types=(pipe_id,) if pipe_id else (),
                flows={},
            )
            pathways = derive_pathways(s, design_base)
            pipe_cost = (
                sum(_pipework_cost(s, pipe_id, a, b) for a, b in pathways)
                if pipe_id
                else 0.0
            )
            fixed = capex + pipe_cost + penalty_const

            if flow_grid is None:
                total = fixed
                flows: dict[tuple[str, str, str, int], float] = {}
                ok = True
                for t in range(s.time_steps):
                    sub = _pattern_flow_lp(s, pattern, pipe_id, t)
                    if sub is None:
                        ok = False
                        break
                    value, step_flows = sub
                    total += value
                    for (j, a, b), v in step_flows.items():
                        flows[j, a, b, t] = v
                if not ok:
                    continue
                candidate = Design(
                    placements=placements,
                    pipe_types=(pipe_id,) if pipe_id else (),
                    flows=flows,
                )
                if best is None or total < best[0] - 1e-12:
                    best = (total, candidate)
            else:
                for candidate, total in _grid_candidates(
                    s, pattern, placements, pipe_id, fixed, flow_grid
                ):
                    if best is None or total < best[0] - 1e-12:
                        best = (total, candidate)

    if best is None:
        raise ScenarioError("no feasible design found by exhaustive search")
    return best[1], best[0]


def _grid_candidates(s, pattern, placements, pipe_id, fixed, flow_grid):
    """Connector-free grid enumeration: every plant placement receives a
    grid fraction of its stream's generation, routed straight from the
    source cell."""
    plant_slots = [
        (j, x) for (j, x), m in sorted(pattern.items())
        if not s.technology(m).is_connector
    ]
    for t_levels in itertools.product(
        *(
            [
                [k / flow_grid for k in range(flow_grid + 1)]
                for _ in plant_slots
                for _t in range(s.time_steps)
            ]
        )
    ):
        flows: dict[tuple[str, str, str, int], float] = {}
        i = 0
        for j, x in plant_slots:
            src = s.stream(j).source_cell
            for t in range(s.time_steps):
                amount = t_levels[i] * s.stream(j).flow_profile[t]
                i += 1
                if amount > 0:
                    key = (j, src, x, t)
                    flows[key] = flows.get(key, 0.0) + amount
        candidate = Design(
            placements=placements,
            pipe_types=(pipe_id,) if pipe_id else (),
            flows=flows,
        )
        report = evaluate_design(s, candidate)
        if report.violations:
            continue
        yield candidate, report.total
