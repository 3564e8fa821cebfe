"""Domain model for eco-industrial park waste-treatment design.

A :class:`Scenario` bundles everything one design run needs: the park grid
with elevations, the waste streams generated inside it, the catalog of
treatment technologies and pipe options, and the economics (discharge
penalties, resource prices, discharge limits).  Scenario files are JSON;
:func:`load_scenario` normalizes units at load time so the rest of the
package works in kg, m3 and day throughout.  All types are frozen records:
once loaded they are safe to share between threads and runs.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

SCHEMA_VERSION = 1

SECONDS_PER_DAY = 86_400.0
LITRES_PER_M3 = 1_000.0
MG_PER_L_TO_KG_PER_M3 = 1e-3

PLANT = "treatment-plant"
CONNECTOR = "connector"


class ScenarioError(ValueError):
    """Raised for malformed scenario files or inconsistent scenario data."""


@dataclass(frozen=True)
class Cell:
    """One grid cell, identified by its centroid coordinates in metres."""

    id: str
    east: float
    north: float
    elevation: float


@dataclass(frozen=True)
class ParkTopology:
    """Park grid: cells plus the elevation-difference classes used by the
    pipe cost tables.  Classes must be strictly increasing."""

    cells: tuple[Cell, ...]
    elevation_classes: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "_by_id", {c.id: c for c in self.cells})

    def cell(self, cell_id: str) -> Cell:
        try:
            return self._by_id[cell_id]  # type: ignore[attr-defined]
        except KeyError:
            raise ScenarioError(f"unknown cell id {cell_id!r}") from None

    @property
    def cell_ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.cells)


def cell_distance(topology: ParkTopology, a: str, b: str) -> float:
    """Euclidean centroid distance between two cells, in metres."""
    ca, cb = topology.cell(a), topology.cell(b)
    return math.hypot(ca.east - cb.east, ca.north - cb.north)


def elevation_class(topology: ParkTopology, a: str, b: str) -> float:
    """Elevation class for a pipe between two cells.

    Returns the smallest configured class >= |elevation difference|; the
    direction of the difference does not matter.  Raises ScenarioError if
    the difference exceeds the largest class.
    """
    diff = abs(topology.cell(a).elevation - topology.cell(b).elevation)
    for cls in topology.elevation_classes:
        if cls >= diff - 1e-12:
            return cls
    raise ScenarioError(
        f"elevation difference {diff:g} m between {a!r} and {b!r} exceeds "
        f"the largest configured class {topology.elevation_classes[-1]:g} m"
    )


@dataclass(frozen=True)
class WasteStream:
    """A waste stream generated at one source cell.

    flow_profile holds one volumetric flow (m3/day) per time step;
    composition maps component name to concentration in kg/m3.
    """

    id: str
    source_cell: str
    flow_profile: tuple[float, ...]
    composition: dict[str, float]


@dataclass(frozen=True)
class Technology:
    """A treatment technology or a stream connector.

    capacity is the throughput bound F^max in m3/day (None = unbounded,
    the connector default).  removal_eff maps component -> removed
    fraction of inflowing mass.  recovery_map maps resource -> component
    -> yield per kg of that component removed (m3/kg for gases, kg/kg
    otherwise).  capex is charged once per built cell; opex per m3 treated
    per day.
    """

    id: str
    kind: str
    capacity: float | None
    removal_eff: dict[str, float]
    recovery_map: dict[str, dict[str, float]]
    capex: float
    opex: float

    @property
    def is_connector(self) -> bool:
        return self.kind == CONNECTOR


@dataclass(frozen=True)
class PipeOption:
    """A pipe diameter option with its cost schedule.

    Cost maps are keyed by elevation class and priced per 100 m of pipe:
    install_cost_per_length covers installation, pump_cost_per_length the
    pumping cost over the whole planning horizon.
    """

    id: str
    diameter: float
    design_velocity: float
    capacity_factor: float
    install_cost_per_length: dict[float, float]
    pump_cost_per_length: dict[float, float]

    @property
    def max_flow(self) -> float:
        """Largest daily flow the pipe supports, m3/day:
        cross-section area x design velocity x capacity factor."""
        area = math.pi * (self.diameter / 2.0) ** 2
        return area * self.design_velocity * self.capacity_factor * SECONDS_PER_DAY


@dataclass(frozen=True)
class Economics:
    """Economic parameters.

    discharge_penalty: component -> currency per kg discharged untreated.
    resource_price: resource -> currency per unit recovered, scaled by
    price_factor in [0, 1].  discharge_limit: component -> per-step tuple
    of maximum total daily discharge in kg/day (empty dict = no limits).
    """

    discharge_penalty: dict[str, float] = field(default_factory=dict)
    resource_price: dict[str, float] = field(default_factory=dict)
    price_factor: float = 1.0
    discharge_limit: dict[str, tuple[float, ...]] = field(default_factory=dict)


@dataclass(frozen=True)
class Scenario:
    """A complete design problem instance."""

    name: str
    topology: ParkTopology
    streams: tuple[WasteStream, ...]
    technologies: tuple[Technology, ...]
    pipes: tuple[PipeOption, ...]
    economics: Economics
    time_steps: int = 1
    step_duration: float = 3650.0
    transport_enabled: bool = True
    currency: str = "GBP"
    notes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "_streams", {s.id: s for s in self.streams})
        object.__setattr__(self, "_techs", {t.id: t for t in self.technologies})
        object.__setattr__(self, "_pipes", {p.id: p for p in self.pipes})

    def stream(self, stream_id: str) -> WasteStream:
        try:
            return self._streams[stream_id]  # type: ignore[attr-defined]
        except KeyError:
            raise ScenarioError(f"unknown stream id {stream_id!r}") from None

    def technology(self, tech_id: str) -> Technology:
        try:
            return self._techs[tech_id]  # type: ignore[attr-defined]
        except KeyError:
            raise ScenarioError(f"unknown technology id {tech_id!r}") from None

    def pipe(self, pipe_id: str) -> PipeOption:
        try:
            return self._pipes[pipe_id]  # type: ignore[attr-defined]
        except KeyError:
            raise ScenarioError(f"unknown pipe id {pipe_id!r}") from None

    @property
    def plants(self) -> tuple[Technology, ...]:
        return tuple(t for t in self.technologies if not t.is_connector)

    @property
    def connectors(self) -> tuple[Technology, ...]:
        return tuple(t for t in self.technologies if t.is_connector)

    @property
    def components(self) -> tuple[str, ...]:
        names: set[str] = set()
        for s in self.streams:
            names.update(s.composition)
        for t in self.technologies:
            names.update(t.removal_eff)
        return tuple(sorted(names))

    @property
    def resources(self) -> tuple[str, ...]:
        names: set[str] = set()
        for t in self.technologies:
            names.update(t.recovery_map)
        names.update(self.economics.resource_price)
        return tuple(sorted(names))

    def total_flow(self, t: int) -> float:
        """Total park generation at step t, m3/day."""
        return sum(s.flow_profile[t] for s in self.streams)

    def best_pipe_flow(self) -> float:
        return max(p.max_flow for p in self.pipes) if self.pipes else 0.0


@dataclass(frozen=True)
class ValidationReport:
    errors: tuple[str, ...]
    warnings: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.errors


# --- loading ---------------------------------------------------------------


def _as_profile(raw: Any, time_steps: int, what: str) -> tuple[float, ...]:
    if isinstance(raw, (int, float)):
        return (float(raw),) * time_steps
    if isinstance(raw, list):
        if len(raw) != time_steps:
            raise ScenarioError(
                f"{what}: profile has {len(raw)} entries, scenario has "
                f"{time_steps} time steps"
            )
        return tuple(float(v) for v in raw)
    raise ScenarioError(f"{what}: expected number or list, got {type(raw).__name__}")


def _concentrations(raw: dict[str, Any], what: str) -> dict[str, float]:
    unit = raw.get("unit", "kg_per_m3")
    values = raw.get("values", {})
    if unit == "mg_per_L":
        factor = MG_PER_L_TO_KG_PER_M3
    elif unit == "kg_per_m3":
        factor = 1.0
    else:
        raise ScenarioError(f"{what}: unknown concentration unit {unit!r}")
    return {str(k): float(v) * factor for k, v in values.items()}


def _cost_table(raw: dict[str, Any], what: str) -> dict[float, float]:
    try:
        return {float(k): float(v) for k, v in raw.items()}
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{what}: bad cost table ({exc})") from None


def scenario_from_dict(doc: dict[str, Any]) -> Scenario:
    """Build a Scenario from a parsed JSON document, normalizing units."""
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioError(
            f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})"
        )
    notes: list[str] = []

    horizon = doc.get("horizon", {})
    time_steps = int(horizon.get("time_steps", 1))
    step_duration = float(horizon.get("step_duration_days", 3650.0))

    topo_doc = doc.get("topology", {})
    cells = tuple(
        Cell(
            id=str(c["id"]),
            east=float(c["east_m"]),
            north=float(c["north_m"]),
            elevation=float(c["elevation_m"]),
        )
        for c in topo_doc.get("cells", [])
    )
    classes = tuple(float(v) for v in topo_doc.get("elevation_classes_m", []))
    topology = ParkTopology(cells=cells, elevation_classes=classes)

    streams = []
    for s in doc.get("streams", []):
        sid = str(s["id"])
        comp_doc = s.get("composition", {})
        streams.append(
            WasteStream(
                id=sid,
                source_cell=str(s["source_cell"]),
                flow_profile=_as_profile(
                    s["flow_m3_per_day"], time_steps, f"stream {sid!r}"
                ),
                composition=_concentrations(comp_doc, f"stream {sid!r}"),
            )
        )
        unit = comp_doc.get("unit", "kg_per_m3")
        if unit != "kg_per_m3":
            notes.append(f"stream {sid}: composition converted from {unit} to kg_per_m3")

    technologies = []
    for t in doc.get("technologies", []):
        tid = str(t["id"])
        kind = str(t.get("kind", PLANT))
        if kind not in (PLANT, CONNECTOR):
            raise ScenarioError(f"technology {tid!r}: unknown kind {kind!r}")
        cap = t.get("capacity_m3_per_day")
        technologies.append(
            Technology(
                id=tid,
                kind=kind,
                capacity=None if cap is None else float(cap),
                removal_eff={str(k): float(v) for k, v in t.get("removal", {}).items()},
                recovery_map={
                    str(r): {str(p): float(y) for p, y in m.items()}
                    for r, m in t.get("recovery", {}).items()
                },
                capex=float(t.get("capex", 0.0)),
                opex=float(t.get("opex_per_m3", 0.0)),
            )
        )

    pipes = tuple(
        PipeOption(
            id=str(p["id"]),
            diameter=float(p["diameter_m"]),
            design_velocity=float(p["design_velocity_m_per_s"]),
            capacity_factor=float(p.get("capacity_factor", 1.0)),
            install_cost_per_length=_cost_table(
                p.get("install_cost_per_100m", {}), f"pipe {p['id']!r}"
            ),
            pump_cost_per_length=_cost_table(
                p.get("pump_cost_per_100m", {}), f"pipe {p['id']!r}"
            ),
        )
        for p in doc.get("pipes", [])
    )

    eco_doc = doc.get("economics", {})
    total_inflow_L = [
        sum(s.flow_profile[t] for s in streams) * LITRES_PER_M3
        for t in range(time_steps)
    ]
    limits: dict[str, tuple[float, ...]] = {}
    for comp, spec in eco_doc.get("discharge_limits", {}).items():
        value = spec["value"]
        unit = spec.get("unit", "kg_per_day")
        if unit == "kg_per_day":
            limits[str(comp)] = _as_profile(value, time_steps, f"discharge limit {comp!r}")
        elif unit == "kg_per_L":
            # Concentration-style limit: converted against the total park
            # inflow volume, one mass bound per step.
            limits[str(comp)] = tuple(float(value) * vol for vol in total_inflow_L)
            notes.append(
                f"discharge limit {comp}: {float(value):g} kg/L converted to "
                f"{limits[str(comp)][0]:g} kg/day against total inflow"
            )
        else:
            raise ScenarioError(f"discharge limit {comp!r}: unknown unit {unit!r}")

    economics = Economics(
        discharge_penalty={
            str(k): float(v) for k, v in eco_doc.get("discharge_penalty_per_kg", {}).items()
        },
        resource_price={
            str(k): float(v) for k, v in eco_doc.get("resource_price", {}).items()
        },
        price_factor=float(eco_doc.get("price_factor", 1.0)),
        discharge_limit=limits,
    )

    scenario = Scenario(
        name=str(doc.get("name", "unnamed")),
        topology=topology,
        streams=tuple(streams),
        technologies=tuple(technologies),
        pipes=pipes,
        economics=economics,
        time_steps=time_steps,
        step_duration=step_duration,
        transport_enabled=bool(doc.get("transport_enabled", True)),
        currency=str(doc.get("currency", "GBP")),
        notes=tuple(notes),
    )
    report = validate_scenario(scenario)
    if report.errors:
        raise ScenarioError("; ".join(report.errors))
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    """Load and normalize a scenario JSON file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path}: top-level JSON value must be an object")
    try:
        return scenario_from_dict(doc)
    except KeyError as exc:
        raise ScenarioError(f"{path}: missing required field {exc}") from None


def scenario_to_dict(s: Scenario) -> dict[str, Any]:
    """Serialize a Scenario in canonical units (kg, m3, day)."""
    return {
        "schema_version": SCHEMA_VERSION,
        "name": s.name,
        "currency": s.currency,
        "transport_enabled": s.transport_enabled,
        "horizon": {"time_steps": s.time_steps, "step_duration_days": s.step_duration},
        "topology": {
            "elevation_classes_m": list(s.topology.elevation_classes),
            "cells": [
                {"id": c.id, "east_m": c.east, "north_m": c.north, "elevation_m": c.elevation}
                for c in s.topology.cells
            ],
        },
        "streams": [
            {
                "id": st.id,
                "source_cell": st.source_cell,
                "flow_m3_per_day": list(st.flow_profile),
                "composition": {"unit": "kg_per_m3", "values": dict(sorted(st.composition.items()))},
            }
            for st in s.streams
        ],
        "technologies": [
            {
                "id": t.id,
                "kind": t.kind,
                "capacity_m3_per_day": t.capacity,
                "removal": dict(sorted(t.removal_eff.items())),
                "recovery": {r: dict(sorted(m.items())) for r, m in sorted(t.recovery_map.items())},
                "capex": t.capex,
                "opex_per_m3": t.opex,
            }
            for t in s.technologies
        ],
        "pipes": [
            {
                "id": p.id,
                "diameter_m": p.diameter,
                "design_velocity_m_per_s": p.design_velocity,
                "capacity_factor": p.capacity_factor,
                "install_cost_per_100m": {repr(k): v for k, v in sorted(p.install_cost_per_length.items())},
                "pump_cost_per_100m": {repr(k): v for k, v in sorted(p.pump_cost_per_length.items())},
            }
            for p in s.pipes
        ],
        "economics": {
            "discharge_penalty_per_kg": dict(sorted(s.economics.discharge_penalty.items())),
            "resource_price": dict(sorted(s.economics.resource_price.items())),
            "price_factor": s.economics.price_factor,
            "discharge_limits": {
                comp: {"value": list(vals), "unit": "kg_per_day"}
                for comp, vals in sorted(s.economics.discharge_limit.items())
            },
        },
    }


def save_scenario(s: Scenario, path: str | Path) -> None:
    doc = scenario_to_dict(s)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# --- validation ------------------------------------------------------------


def validate_scenario(s: Scenario) -> ValidationReport:
    """Structural and physical checks.

    Errors make a scenario unusable; warnings flag suspicious but legal
    configurations (for example total generation exceeding the best pipe's
    capacity, which makes full centralisation infeasible).
    """
    errors: list[str] = []
    warnings: list[str] = []

    ids = [c.id for c in s.topology.cells]
    if len(ids) != len(set(ids)):
        errors.append("duplicate cell ids")
    if not s.topology.cells:
        errors.append("topology has no cells")
    for c in s.topology.cells:
        if not all(math.isfinite(v) for v in (c.east, c.north, c.elevation)):
            errors.append(f"cell {c.id!r}: non-finite coordinates")
    classes = s.topology.elevation_classes
    if not classes:
        errors.append("no elevation classes configured")
    else:
        if any(b <= a for a, b in zip(classes, classes[1:])):
            errors.append("elevation classes must be strictly increasing")
        if classes[0] < 0:
            errors.append("elevation classes must be non-negative")

    if s.time_steps < 1:
        errors.append("time_steps must be >= 1")
    if s.step_duration <= 0:
        errors.append("step_duration must be positive")

    sids = [st.id for st in s.streams]
    if len(sids) != len(set(sids)):
        errors.append("duplicate stream ids")
    known_cells = set(ids)
    for st in s.streams:
        if st.source_cell not in known_cells:
            errors.append(f"stream {st.id!r}: unknown source cell {st.source_cell!r}")
        if len(st.flow_profile) != s.time_steps:
            errors.append(f"stream {st.id!r}: flow profile length != time_steps")
        if any(f < 0 for f in st.flow_profile):
            errors.append(f"stream {st.id!r}: negative flow")
        if any(v < 0 for v in st.composition.values()):
            errors.append(f"stream {st.id!r}: negative concentration")
        if not any(v > 0 for v in st.composition.values()):
            warnings.append(f"stream {st.id!r}: all-zero composition")

    tids = [t.id for t in s.technologies]
    if len(tids) != len(set(tids)):
        errors.append("duplicate technology ids")
    for t in s.technologies:
        for comp, eff in t.removal_eff.items():
            if not 0.0 <= eff <= 1.0:
                errors.append(f"technology {t.id!r}: removal for {comp} outside [0, 1]")
        if t.is_connector:
            if any(v != 0 for v in t.removal_eff.values()):
                errors.append(f"connector {t.id!r}: nonzero removal efficiency")
            if any(y != 0 for m in t.recovery_map.values() for y in m.values()):
                errors.append(f"connector {t.id!r}: nonzero recovery yield")
        else:
            if t.capacity is None or t.capacity <= 0:
                errors.append(f"technology {t.id!r}: plants need a positive capacity")
        if t.capex < 0 or t.opex < 0:
            errors.append(f"technology {t.id!r}: negative cost")

    pids = [p.id for p in s.pipes]
    if len(pids) != len(set(pids)):
        errors.append("duplicate pipe ids")
    for p in s.pipes:
        if p.diameter <= 0 or p.design_velocity <= 0:
            errors.append(f"pipe {p.id!r}: diameter and velocity must be positive")
        if not 0.0 < p.capacity_factor <= 1.0:
            errors.append(f"pipe {p.id!r}: capacity_factor outside (0, 1]")
        for table_name, table in (
            ("install", p.install_cost_per_length),
            ("pump", p.pump_cost_per_length),
        ):
            missing = [cls for cls in classes if cls not in table]
            if missing:
                errors.append(
                    f"pipe {p.id!r}: {table_name} cost table missing classes {missing}"
                )
            if any(v < 0 for v in table.values()):
                errors.append(f"pipe {p.id!r}: negative {table_name} cost")

    known_components = set(s.components)
    # s.resources also folds in the priced names, so check prices against
    # what the technologies can actually recover
    recoverable = {r for t in s.technologies for r in t.recovery_map}
    eco = s.economics
    for comp in eco.discharge_penalty:
        if comp not in known_components:
            errors.append(f"discharge penalty references unknown component {comp!r}")
    if any(v < 0 for v in eco.discharge_penalty.values()):
        errors.append("negative discharge penalty")
    for comp in eco.discharge_limit:
        if comp not in known_components:
            errors.append(f"discharge limit references unknown component {comp!r}")
    for res in eco.resource_price:
        if res not in recoverable:
            errors.append(f"resource price references unknown resource {res!r}")
    if not 0.0 <= eco.price_factor <= 1.0:
        errors.append("price_factor outside [0, 1]")

    for t in s.technologies:
        for res, by_comp in t.recovery_map.items():
            for comp in by_comp:
                if comp not in known_components:
                    errors.append(
                        f"technology {t.id!r}: recovery references unknown component {comp!r}"
                    )

    if not errors and s.pipes and s.streams and s.transport_enabled:
        best = s.best_pipe_flow()
        for t in range(s.time_steps):
            if s.total_flow(t) > best:
                warnings.append(
                    f"step {t}: total generation {s.total_flow(t):g} m3/d exceeds the "
                    f"best pipe capacity {best:g} m3/d; full centralisation of one "
                    "cell's inflow into a single outbound link is infeasible"
                )
                break

    if not errors:
        for comp, vals in eco.discharge_limit.items():
            for t in range(s.time_steps):
                best_removal = max(
                    (tech.removal_eff.get(comp, 0.0) for tech in s.plants), default=0.0
                )
                floor = sum(
                    st.flow_profile[t] * st.composition.get(comp, 0.0) for st in s.streams
                ) * (1.0 - best_removal)
                if floor > vals[t] * (1 + 1e-9):
                    warnings.append(
                        f"discharge limit for {comp} at step {t} ({vals[t]:g} kg/d) is "
                        f"tighter than the best achievable discharge {floor:g} kg/d"
                    )
                    break

    return ValidationReport(errors=tuple(errors), warnings=tuple(warnings))
