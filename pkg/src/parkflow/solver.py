"""LP relaxation and branch-and-bound for MilpModels.

The LP relaxation is solved with HiGHS dual simplex through scipy, which
is deterministic for a fixed model.  Integrality is handled here: a
best-bound branch-and-bound over the non-implied binaries, with an initial
depth-first dive to find an incumbent early.  Variables marked
implied_integral are never branched on; their gadget rows pin them once
the decision binaries are integral, which keeps the tree small.

Bounds and gaps are for minimization.  The reported gap is
(incumbent - best_bound) / max(|incumbent|, 1).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import heapq
import math
import shlex
import subprocess
import tempfile
import time
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from parkflow.milp import (
    BINARY,
    EQ,
    GE,
    LE,
    MilpModel,
    ModelError,
    export_model,
    import_solution,
    name_table,
)

OPTIMAL = "optimal"
FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
LIMIT = "limit"


@dataclass
class SolveOptions:
    rel_gap: float = 1e-6
    abs_gap: float = 0.0
    node_limit: int | None = None
    time_limit: float | None = None
    integrality_tol: float = 1e-6
    feasibility_tol: float = 1e-7
    worker_count: int = 1

    def __post_init__(self) -> None:
        if self.rel_gap < 0 or self.abs_gap < 0:
            raise ValueError("gaps must be non-negative")
        if self.integrality_tol <= 0 or self.feasibility_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.node_limit is not None and self.node_limit < 1:
            raise ValueError("node_limit must be at least 1")
        if self.time_limit is not None and self.time_limit <= 0:
            raise ValueError("time_limit must be positive")
        if self.worker_count < 1:
            raise ValueError("worker_count must be at least 1")


@dataclass
class LpResult:
    status: str  # optimal | infeasible | unbounded | failed
    objective: float | None
    point: dict[int, float] | None


@dataclass
class SolveResult:
    status: str
    objective: float | None
    assignment: dict[int, float] | None
    best_bound: float
    gap: float | None
    nodes_explored: int
    wall_time: float


class _LpData:
    """Prebuilt arrays for repeated relaxation solves with varying bounds."""

    def __init__(self, model: MilpModel):
        model.canonicalize()
        self.model = model
        n = len(model.variables)
        self.n = n
        self.c = np.zeros(n)
        for vid, coef in model.objective.items():
            self.c[vid] = coef
        self.constant = model.objective_constant

        ub_rows: list[tuple[tuple[tuple[int, float], ...], float]] = []
        eq_rows: list[tuple[tuple[tuple[int, float], ...], float]] = []
        for con in model.constraints:
            if con.sense == LE:
                ub_rows.append((con.terms, con.rhs))
            elif con.sense == GE:
                ub_rows.append((tuple((v, -c) for v, c in con.terms), -con.rhs))
            else:
                eq_rows.append((con.terms, con.rhs))
        self.A_ub, self.b_ub = self._assemble(ub_rows, n)
        self.A_eq, self.b_eq = self._assemble(eq_rows, n)

        self.lb = np.array([v.lower for v in model.variables])
        self.ub = np.array([v.upper for v in model.variables])

    @staticmethod
    def _assemble(rows, n):
        if not rows:
            return None, None
        data, ri, ci, rhs = [], [], [], []
        for i, (terms, b) in enumerate(rows):
            rhs.append(b)
            for vid, coef in terms:
                ri.append(i)
                ci.append(vid)
                data.append(coef)
        mat = sparse.csc_array(
            (np.array(data), (np.array(ri), np.array(ci))), shape=(len(rows), n)
        )
        return mat, np.array(rhs)

    def solve(self, fixings: dict[int, float] | None = None):
        """Returns (status, objective incl. constant, x array or None)."""
        lb, ub = self.lb, self.ub
        if fixings:
            lb = lb.copy()
            ub = ub.copy()
            for vid, value in fixings.items():
                if value < self.lb[vid] - 1e-12 or value > self.ub[vid] + 1e-12:
                    return INFEASIBLE, None, None
                lb[vid] = ub[vid] = value
        res = linprog(
            self.c,
            A_ub=self.A_ub,
            b_ub=self.b_ub,
            A_eq=self.A_eq,
            b_eq=self.b_eq,
            bounds=np.column_stack((lb, ub)),
            method="highs-ds",
        )
        if res.status == 0:
            return OPTIMAL, float(res.fun) + self.constant, res.x
        if res.status == 2:
            return INFEASIBLE, None, None
        if res.status == 3:
            return UNBOUNDED, None, None
        return "failed", None, None


def solve_lp(model: MilpModel, fixings: dict[int, float] | None = None) -> LpResult:
    """Solve the LP relaxation (binaries relaxed to their bounds), with
    optional variable fixings applied through the bounds."""
    status, obj, x = _LpData(model).solve(fixings)
    if status != OPTIMAL:
        return LpResult(status=status, objective=None, point=None)
    return LpResult(
        status=OPTIMAL, objective=obj, point={i: float(v) for i, v in enumerate(x)}
    )


def _fractional(x, ids, tol):
    """Most fractional variable among ids, or None if all integral."""
    best = None
    best_frac = tol
    for vid in ids:
        frac = abs(x[vid] - round(x[vid]))
        if frac > best_frac:
            best_frac = frac
            best = vid
    return best


def solve_milp(model: MilpModel, options: SolveOptions | None = None) -> SolveResult:
    opts = options or SolveOptions()
    t0 = time.monotonic()
    lp = _LpData(model)
    binary_ids = [v.id for v in model.variables if v.kind == BINARY]
    branch_ids = [
        v.id
        for v in model.variables
        if v.kind == BINARY and not v.implied_integral and v.lower < v.upper
    ]

    def elapsed():
        return time.monotonic() - t0

    def result(status, obj, x, bound, nodes):
        gap = None
        if obj is not None and bound is not None and math.isfinite(bound):
            gap = max(0.0, obj - bound) / max(abs(obj), 1.0)
        return SolveResult(
            status=status,
            objective=obj,
            assignment=x,
            best_bound=bound if bound is not None else math.inf,
            gap=gap,
            nodes_explored=nodes,
            wall_time=elapsed(),
        )

    status, root_obj, root_x = lp.solve()
    nodes = 1
    if status == INFEASIBLE:
        return result(INFEASIBLE, None, None, math.inf, nodes)
    if status == UNBOUNDED:
        return result(UNBOUNDED, None, None, -math.inf, nodes)
    if status != OPTIMAL:
        raise ModelError("LP relaxation failed numerically at the root")

    incumbent_obj = math.inf
    incumbent_x: dict[int, float] | None = None

    def gap_slack(obj):
        return max(opts.abs_gap, opts.rel_gap * max(abs(obj), 1.0))

    def try_incumbent(obj, x):
        nonlocal incumbent_obj, incumbent_x
        if obj >= incumbent_obj:
            return
        point = {}
        for i, v in enumerate(x):
            value = float(v)
            if i in integral_check_ids and abs(value - round(value)) <= opts.integrality_tol:
                value = float(round(value))
            point[i] = value
        incumbent_obj = obj
        incumbent_x = point

    integral_check_ids = set(binary_ids)

    def is_integral(x):
        return all(
            abs(x[vid] - round(x[vid])) <= opts.integrality_tol for vid in binary_ids
        )

    def pick_branch(x):
        vid = _fractional(x, branch_ids, opts.integrality_tol)
        if vid is None:
            # safety net: an implied binary went fractional, branch on it
            vid = _fractional(x, binary_ids, opts.integrality_tol)
        return vid

    # depth-first dive from the root, rounding toward the LP point, to get
    # an incumbent before the best-bound phase starts
    fix: dict[int, float] = {}
    x = root_x
    while True:
        vid = pick_branch(x)
        if vid is None:
            try_incumbent(lp_obj if fix else root_obj, x)
            break
        nearest = float(round(x[vid]))
        fix[vid] = nearest
        status, lp_obj, x2 = lp.solve(fix)
        nodes += 1
        if status != OPTIMAL:
            fix[vid] = 1.0 - nearest
            status, lp_obj, x2 = lp.solve(fix)
            nodes += 1
            if status != OPTIMAL:
                break
        x = x2
        if opts.node_limit and nodes >= opts.node_limit:
            break
        if opts.time_limit and elapsed() > opts.time_limit:
            break

    # best-bound search; discarded_min tracks the lowest bound ever pruned
    # by the gap test, which caps how good the true optimum could be
    heap: list[tuple[float, int, dict[int, float]]] = [(root_obj, 0, {})]
    tie = 0
    discarded_min = math.inf
    hit_limit = False

    def prunable(bound):
        return (
            incumbent_x is not None
            and bound >= incumbent_obj - gap_slack(incumbent_obj)
        )

    pool = (
        ThreadPoolExecutor(max_workers=opts.worker_count)
        if opts.worker_count > 1
        else None
    )
    try:
        while heap:
            if opts.node_limit and nodes >= opts.node_limit:
                hit_limit = True
                break
            if opts.time_limit and elapsed() > opts.time_limit:
                hit_limit = True
                break
            batch = []
            width = opts.worker_count if pool else 1
            while heap and len(batch) < width:
                bound, _, fix = heapq.heappop(heap)
                if prunable(bound):
                    discarded_min = min(discarded_min, bound)
                    continue
                batch.append((bound, fix))
            if not batch:
                continue
            if pool:
                solved = list(pool.map(lambda item: lp.solve(item[1]), batch))
            else:
                solved = [lp.solve(fix) for _, fix in batch]
            for (bound, fix), (status, obj, x) in zip(batch, solved):
                nodes += 1
                if status == INFEASIBLE:
                    continue
                if status != OPTIMAL:
                    raise ModelError("LP relaxation failed numerically at a node")
                if prunable(obj):
                    discarded_min = min(discarded_min, obj)
                    continue
                vid = pick_branch(x)
                if vid is None:
                    try_incumbent(obj, x)
                    continue
                for value in (0.0, 1.0):
                    child = dict(fix)
                    child[vid] = value
                    tie += 1
                    heapq.heappush(heap, (obj, tie, child))
    finally:
        if pool:
            pool.shutdown()

    if heap:
        best_bound = min(heap[0][0], discarded_min)
    else:
        best_bound = min(
            discarded_min, incumbent_obj if incumbent_x is not None else math.inf
        )

    if incumbent_x is None:
        if hit_limit:
            return result(LIMIT, None, None, best_bound, nodes)
        return result(INFEASIBLE, None, None, math.inf, nodes)
    res = result(FEASIBLE, incumbent_obj, incumbent_x, best_bound, nodes)
    if res.gap is not None and res.gap <= opts.rel_gap:
        res.status = OPTIMAL
    elif hit_limit:
        res.status = LIMIT
    return res


def check_assignment(
    model: MilpModel,
    assignment: dict[int, float],
    feasibility_tol: float = 1e-7,
    integrality_tol: float = 1e-6,
) -> list[str]:
    """Audit an assignment against every row, bound, and binary of the
    model.  Violations are scaled: a row fails when it is off by more than
    feasibility_tol * max(1, |rhs|)."""
    problems = []
    for v in model.variables:
        x = assignment.get(v.id, 0.0)
        slack = feasibility_tol * max(1.0, abs(v.lower), abs(v.upper))
        if x < v.lower - slack or x > v.upper + slack:
            problems.append(f"bound: {v.name} = {x!r} outside [{v.lower}, {v.upper}]")
        if v.kind == BINARY and abs(x - round(x)) > integrality_tol:
            problems.append(f"integrality: {v.name} = {x!r}")
    for i, con in enumerate(model.constraints):
        lhs = sum(coef * assignment.get(vid, 0.0) for vid, coef in con.terms)
        tol = feasibility_tol * max(1.0, abs(con.rhs))
        bad = (
            (con.sense == LE and lhs > con.rhs + tol)
            or (con.sense == GE and lhs < con.rhs - tol)
            or (con.sense == EQ and abs(lhs - con.rhs) > tol)
        )
        if bad:
            problems.append(
                f"row {con.tag or i}: lhs {lhs!r} {con.sense} rhs {con.rhs!r}"
            )
    return problems


def solve_external(
    model: MilpModel,
    solver_command: str,
    workdir: str | Path | None = None,
    options: SolveOptions | None = None,
) -> SolveResult:
    """Solve through an external command.

    The model is exported as MPS (with a name-table sidecar) and the
    command is run with {mps} and {sol} placeholders substituted; without
    placeholders the MPS path is appended.  The command must write a
    two-column "name value" solution file at <mps path>.sol.  The imported
    solution is audited against every model row before it is accepted, and
    an objective below the root LP bound is rejected as inconsistent.
    """
    opts = options or SolveOptions()
    t0 = time.monotonic()
    base = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="parkflow-mps-"))
    base.mkdir(parents=True, exist_ok=True)
    mps_path = base / "model.mps"
    sol_path = Path(str(mps_path) + ".sol")
    mps_path.write_text(export_model(model))
    (base / "model.names.tsv").write_text(name_table(model))

    if "{mps}" in solver_command or "{sol}" in solver_command:
        cmd = solver_command.replace("{mps}", str(mps_path)).replace(
            "{sol}", str(sol_path)
        )
    else:
        cmd = f"{solver_command} {shlex.quote(str(mps_path))}"
    proc = subprocess.run(
        cmd, shell=True, capture_output=True, text=True, timeout=opts.time_limit
    )
    if proc.returncode != 0:
        raise ModelError(
            f"external solver failed (exit {proc.returncode}): {proc.stderr.strip()[-500:]}"
        )
    if not sol_path.exists():
        raise ModelError(f"external solver wrote no solution file at {sol_path}")

    assignment, _warnings = import_solution(model, sol_path.read_text())
    problems = check_assignment(
        model, assignment, opts.feasibility_tol, opts.integrality_tol
    )
    if problems:
        raise ModelError(
            "external solution rejected: " + "; ".join(problems[:10])
        )
    objective = model.objective_value(assignment)

    root = solve_lp(model)
    best_bound = root.objective if root.status == OPTIMAL else -math.inf
    if root.status == OPTIMAL and objective < best_bound - opts.feasibility_tol * max(
        1.0, abs(best_bound)
    ):
        raise ModelError(
            f"external objective {objective!r} is below the relaxation bound "
            f"{best_bound!r}; solution file is inconsistent with the model"
        )
    gap = max(0.0, objective - best_bound) / max(abs(objective), 1.0)
    return SolveResult(
        status=OPTIMAL if gap <= opts.rel_gap else FEASIBLE,
        objective=objective,
        assignment=assignment,
        best_bound=best_bound,
        gap=gap,
        nodes_explored=0,
        wall_time=time.monotonic() - t0,
    )
