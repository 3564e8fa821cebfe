"""Small mixed-integer linear programming layer.

Holds the model containers plus the linearization gadgets the formulation
is built from, and a fixed-layout MPS writer/reader pair so models can be
handed to external solvers.  Everything here is solver-agnostic; see
:mod:`parkflow.solver` for the bundled branch-and-bound.

Linearization gadgets (b, b1, b2 binary-valued, f continuous in [0, U]):

    product  w = b * f     w <= U*b;  w <= f;  w >= f - U*(1 - b);  w >= 0
    product  w = b1 * b2   w <= b1;  w <= b2;  w >= b1 + b2 - 1
    OR link  y = [sum(xs) >= 1]
                           sum(xs) >= y;  sum(xs) <= len(xs)*y;  y >= x_i

The per-element rows of the OR link are implied at integral points but pin
y in the LP relaxation as soon as the xs are integral, which keeps the
branch-and-bound tree small.  Gadget outputs are marked implied-integral:
their integrality follows from the gadget rows once the true decision
binaries are integral, so the solver never needs to branch on them.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

BINARY = "binary"
CONTINUOUS = "continuous"

LE = "<="
EQ = "="
GE = ">="


class ModelError(ValueError):
    """Raised for malformed model construction or bad solution files."""


@dataclass(frozen=True)
class Variable:
    id: int
    name: str
    kind: str
    lower: float
    upper: float
    implied_integral: bool = False


@dataclass(frozen=True)
class LinExpr:
    """Linear expression: sum of (variable id, coefficient) plus a constant."""

    terms: tuple[tuple[int, float], ...]
    constant: float = 0.0


def as_expr(x: Variable | LinExpr) -> LinExpr:
    if isinstance(x, Variable):
        return LinExpr(terms=((x.id, 1.0),))
    if isinstance(x, LinExpr):
        return x
    raise ModelError(f"expected Variable or LinExpr, got {type(x).__name__}")


def complement(x: Variable | LinExpr) -> LinExpr:
    """1 - x, for binary-valued x."""
    e = as_expr(x)
    return LinExpr(
        terms=tuple((vid, -c) for vid, c in e.terms), constant=1.0 - e.constant
    )


@dataclass(frozen=True)
class LinearConstraint:
    terms: tuple[tuple[int, float], ...]
    sense: str
    rhs: float
    tag: str = ""


def _merge_terms(terms) -> tuple[tuple[int, float], ...]:
    acc: dict[int, float] = {}
    for vid, coef in terms:
        acc[vid] = acc.get(vid, 0.0) + float(coef)
    return tuple((vid, c) for vid, c in sorted(acc.items()) if c != 0.0)


@dataclass
class MilpModel:
    """A minimization MILP: variables, linear constraints, objective."""

    name: str = "model"
    variables: list[Variable] = field(default_factory=list)
    constraints: list[LinearConstraint] = field(default_factory=list)
    objective: dict[int, float] = field(default_factory=dict)
    objective_constant: float = 0.0

    def add_variable(
        self,
        name: str,
        kind: str = CONTINUOUS,
        lower: float = 0.0,
        upper: float = math.inf,
        implied_integral: bool = False,
    ) -> Variable:
        if kind not in (BINARY, CONTINUOUS):
            raise ModelError(f"unknown variable kind {kind!r}")
        if kind == BINARY:
            lower = max(0.0, lower)
            upper = min(1.0, upper)
        if lower > upper:
            raise ModelError(f"variable {name!r}: lower bound exceeds upper bound")
        var = Variable(
            id=len(self.variables),
            name=name,
            kind=kind,
            lower=lower,
            upper=upper,
            implied_integral=implied_integral,
        )
        self.variables.append(var)
        return var

    def fix_variable(self, var: Variable, value: float) -> None:
        self.variables[var.id] = Variable(
            id=var.id,
            name=var.name,
            kind=var.kind,
            lower=value,
            upper=value,
            implied_integral=var.implied_integral,
        )

    def add_constraint(
        self,
        expr: LinExpr | list[tuple[Variable | int, float]],
        sense: str,
        rhs: float,
        tag: str = "",
    ) -> LinearConstraint:
        if sense not in (LE, EQ, GE):
            raise ModelError(f"unknown constraint sense {sense!r}")
        if isinstance(expr, LinExpr):
            terms = expr.terms
            rhs = rhs - expr.constant
        else:
            terms = tuple(
                (v.id if isinstance(v, Variable) else int(v), float(c)) for v, c in expr
            )
        con = LinearConstraint(terms=_merge_terms(terms), sense=sense, rhs=float(rhs), tag=tag)
        self.constraints.append(con)
        return con

    def add_objective(self, var: Variable | int, coefficient: float) -> None:
        vid = var.id if isinstance(var, Variable) else int(var)
        self.objective[vid] = self.objective.get(vid, 0.0) + float(coefficient)

    def add_objective_constant(self, value: float) -> None:
        self.objective_constant += float(value)

    @property
    def binaries(self) -> list[Variable]:
        return [v for v in self.variables if v.kind == BINARY]

    def canonicalize(self) -> "MilpModel":
        """Merge duplicate terms, drop exact zeros, sort terms by variable
        id.  Idempotent; returns self."""
        self.constraints = [
            LinearConstraint(
                terms=_merge_terms(c.terms), sense=c.sense, rhs=c.rhs, tag=c.tag
            )
            for c in self.constraints
        ]
        self.objective = {
            vid: c for vid, c in sorted(self.objective.items()) if c != 0.0
        }
        return self

    def objective_value(self, assignment: dict[int, float]) -> float:
        return self.objective_constant + sum(
            coef * assignment.get(vid, 0.0) for vid, coef in self.objective.items()
        )


# --- linearization gadgets ---------------------------------------------------


def add_product_bin_cont(
    model: MilpModel,
    b: Variable | LinExpr,
    f: Variable,
    f_upper: float,
    name: str | None = None,
) -> Variable:
    """Add w = b*f for binary-valued b and continuous f with 0 <= f <= f_upper.

    f_upper must be a finite upper bound on f over the feasible region; the
    gadget is exact at every point where b is integral.
    """
    if not math.isfinite(f_upper) or f_upper < 0:
        raise ModelError(f"product {name or f.name!r}: need a finite f_upper >= 0")
    if f.lower < 0:
        raise ModelError(f"product {name or f.name!r}: f must be non-negative")
    be = as_expr(b)
    w = model.add_variable(
        name or f"prod({f.name})", CONTINUOUS, lower=0.0, upper=f_upper
    )
    # w <= f_upper * b
    model.add_constraint(
        LinExpr(terms=((w.id, 1.0),) + tuple((vid, -f_upper * c) for vid, c in be.terms),
                constant=-f_upper * be.constant),
        LE, 0.0, tag="prod_ub",
    )
    # w <= f
    model.add_constraint([(w, 1.0), (f, -1.0)], LE, 0.0, tag="prod_f")
    # w >= f - f_upper * (1 - b), i.e. -w + f + f_upper*b <= f_upper
    model.add_constraint(
        LinExpr(
            terms=((w.id, -1.0), (f.id, 1.0))
            + tuple((vid, f_upper * c) for vid, c in be.terms),
            constant=f_upper * be.constant,
        ),
        LE, f_upper, tag="prod_lb",
    )
    return w


def add_product_bin_bin(
    model: MilpModel,
    b1: Variable | LinExpr,
    b2: Variable | LinExpr,
    name: str | None = None,
) -> Variable:
    """Add binary w = b1 AND b2 for binary-valued b1, b2."""
    e1, e2 = as_expr(b1), as_expr(b2)
    w = model.add_variable(name or "and", BINARY, implied_integral=True)
    model.add_constraint(
        LinExpr(terms=((w.id, 1.0),) + tuple((v, -c) for v, c in e1.terms),
                constant=-e1.constant),
        LE, 0.0, tag="and_b1",
    )
    model.add_constraint(
        LinExpr(terms=((w.id, 1.0),) + tuple((v, -c) for v, c in e2.terms),
                constant=-e2.constant),
        LE, 0.0, tag="and_b2",
    )
    model.add_constraint(
        LinExpr(
            terms=((w.id, -1.0),)
            + tuple((v, c) for v, c in e1.terms)
            + tuple((v, c) for v, c in e2.terms),
            constant=e1.constant + e2.constant,
        ),
        LE, 1.0, tag="and_lb",
    )
    return w


def add_indicator_link(
    model: MilpModel,
    y: Variable,
    xs: list[Variable | LinExpr],
    tag: str = "or",
) -> None:
    """Link binary y to a non-empty list of binary-valued xs: y = 1 iff
    sum(xs) >= 1.  Encoded without strict inequalities as sum(xs) >= y and
    sum(xs) <= len(xs)*y, strengthened with y >= x_i per element."""
    if not xs:
        raise ModelError(f"indicator {y.name!r}: xs must be non-empty")
    exprs = [as_expr(x) for x in xs]
    all_terms = [(vid, c) for e in exprs for vid, c in e.terms]
    const = sum(e.constant for e in exprs)
    n = float(len(exprs))
    # sum(xs) >= y
    model.add_constraint(
        LinExpr(terms=tuple(all_terms) + ((y.id, -1.0),), constant=const),
        GE, 0.0, tag=f"{tag}_up",
    )
    # sum(xs) <= n * y
    model.add_constraint(
        LinExpr(terms=tuple(all_terms) + ((y.id, -n),), constant=const),
        LE, 0.0, tag=f"{tag}_dn",
    )
    for e in exprs:
        model.add_constraint(
            LinExpr(terms=tuple((v, c) for v, c in e.terms) + ((y.id, -1.0),),
                    constant=e.constant),
            LE, 0.0, tag=f"{tag}_el",
        )
    model.variables[y.id] = Variable(
        id=y.id, name=y.name, kind=y.kind, lower=y.lower, upper=y.upper,
        implied_integral=True,
    )


# --- MPS export / import -----------------------------------------------------

_OBJ_ROW = "OBJ"


def _mangle_var(i: int) -> str:
    return f"X{i:07d}"


def _mangle_row(i: int) -> str:
    return f"R{i:07d}"


def _num(value: float) -> str:
    # repr keeps the shortest exact decimal; pad for the fixed layout.
    text = repr(float(value))
    if text.endswith(".0"):
        text = text[:-2]
    return text


def export_model(model: MilpModel) -> str:
    """Serialize to fixed-layout MPS.  Names are mangled to 8 characters
    (see :func:`name_table`); numeric fields carry full precision and may
    widen past the classic 12-character columns."""
    model.canonicalize()
    lines = [f"NAME          {model.name[:60]}"]
    lines.append("ROWS")
    lines.append(f" N  {_OBJ_ROW}")
    for i, con in enumerate(model.constraints):
        kind = {LE: "L", EQ: "E", GE: "G"}[con.sense]
        lines.append(f" {kind}  {_mangle_row(i)}")

    by_var: dict[int, list[tuple[str, float]]] = {v.id: [] for v in model.variables}
    for vid, coef in model.objective.items():
        by_var[vid].append((_OBJ_ROW, coef))
    for i, con in enumerate(model.constraints):
        row = _mangle_row(i)
        for vid, coef in con.terms:
            by_var[vid].append((row, coef))

    lines.append("COLUMNS")
    in_int = False
    marker = 0
    for v in model.variables:
        want_int = v.kind == BINARY
        if want_int != in_int:
            word = "'INTORG'" if want_int else "'INTEND'"
            lines.append(f"    MK{marker:06d}  'MARKER'                 {word}")
            marker += 1
            in_int = want_int
        entries = by_var[v.id] or [(_OBJ_ROW, 0.0)]
        col = _mangle_var(v.id)
        for j in range(0, len(entries), 2):
            chunk = entries[j : j + 2]
            parts = f"    {col:<10}"
            for row, coef in chunk:
                # full-precision numbers may overflow the classic 12-char
                # field; always keep at least one separating space
                text = _num(coef)
                parts += f"{row:<10}{text}{' ' * max(1, 15 - len(text))}"
            lines.append(parts.rstrip())
    if in_int:
        lines.append(f"    MK{marker:06d}  'MARKER'                 'INTEND'")

    lines.append("RHS")
    if model.objective_constant != 0.0:
        # MPS convention: the objective row's RHS entry is minus the constant.
        lines.append(f"    RHS       {_OBJ_ROW:<10}{_num(-model.objective_constant)}")
    for i, con in enumerate(model.constraints):
        if con.rhs != 0.0:
            lines.append(f"    RHS       {_mangle_row(i):<10}{_num(con.rhs)}")

    lines.append("BOUNDS")
    for v in model.variables:
        col = _mangle_var(v.id)
        if v.kind == BINARY and (v.lower, v.upper) == (0.0, 1.0):
            lines.append(f" BV BND       {col}")
            continue
        if v.lower == v.upper:
            lines.append(f" FX BND       {col:<10}{_num(v.lower)}")
            continue
        if v.lower != 0.0:
            if math.isinf(v.lower):
                lines.append(f" MI BND       {col}")
            else:
                lines.append(f" LO BND       {col:<10}{_num(v.lower)}")
        if not math.isinf(v.upper):
            lines.append(f" UP BND       {col:<10}{_num(v.upper)}")
    lines.append("ENDATA")
    return "\n".join(lines) + "\n"


def name_table(model: MilpModel) -> str:
    """Tab-separated mangled-name table emitted alongside the MPS file."""
    lines = ["# mangled\toriginal"]
    for v in model.variables:
        lines.append(f"{_mangle_var(v.id)}\t{v.name}")
    for i, con in enumerate(model.constraints):
        lines.append(f"{_mangle_row(i)}\t{con.tag or 'row'}[{i}]")
    return "\n".join(lines) + "\n"


def parse_mps(text: str) -> MilpModel:
    """Read the MPS subset written by :func:`export_model`."""
    model = MilpModel()
    section = None
    row_sense: dict[str, str] = {}
    row_order: list[str] = []
    row_terms: dict[str, list[tuple[int, float]]] = {}
    row_rhs: dict[str, float] = {}
    obj_name = None
    col_ids: dict[str, int] = {}
    col_kind: dict[str, str] = {}
    bounds: dict[str, list[tuple[str, float]]] = {}
    in_int = False

    for raw in text.splitlines():
        if not raw.strip() or raw.lstrip().startswith("*"):
            continue
        if not raw[0].isspace():
            head = raw.split()
            section = head[0].upper()
            if section == "NAME" and len(head) > 1:
                model.name = head[1]
            continue
        tok = raw.split()
        if section == "ROWS":
            kind, rname = tok[0].upper(), tok[1]
            if kind == "N":
                if obj_name is None:
                    obj_name = rname
                continue
            sense = {"L": LE, "E": EQ, "G": GE}.get(kind)
            if sense is None:
                raise ModelError(f"unknown row kind {kind!r}")
            row_sense[rname] = sense
            row_order.append(rname)
            row_terms[rname] = []
        elif section == "COLUMNS":
            if len(tok) >= 3 and tok[1] == "'MARKER'":
                in_int = tok[2] == "'INTORG'"
                continue
            cname = tok[0]
            if cname not in col_ids:
                col_ids[cname] = len(col_ids)
                col_kind[cname] = BINARY if in_int else CONTINUOUS
            vid = col_ids[cname]
            for j in range(1, len(tok) - 1, 2):
                rname, coef = tok[j], float(tok[j + 1])
                if rname == obj_name:
                    model.objective[vid] = model.objective.get(vid, 0.0) + coef
                elif rname in row_terms:
                    row_terms[rname].append((vid, coef))
                else:
                    raise ModelError(f"column {cname!r} references unknown row {rname!r}")
        elif section == "RHS":
            for j in range(1, len(tok) - 1, 2):
                rname, value = tok[j], float(tok[j + 1])
                if rname == obj_name:
                    model.objective_constant = -value
                else:
                    row_rhs[rname] = value
        elif section == "BOUNDS":
            btype, cname = tok[0].upper(), tok[2]
            value = float(tok[3]) if len(tok) > 3 else 0.0
            bounds.setdefault(cname, []).append((btype, value))
        elif section == "RANGES":
            raise ModelError("RANGES section not supported")

    for cname, vid in col_ids.items():
        kind = col_kind[cname]
        lower, upper = 0.0, (1.0 if kind == BINARY else math.inf)
        for btype, value in bounds.get(cname, []):
            if btype == "BV":
                lower, upper = 0.0, 1.0
            elif btype == "UP":
                upper = value
            elif btype == "LO":
                lower = value
            elif btype == "FX":
                lower = upper = value
            elif btype == "MI":
                lower = -math.inf
            elif btype == "PL":
                upper = math.inf
            else:
                raise ModelError(f"unsupported bound type {btype!r}")
        model.add_variable(cname, kind, lower, upper)

    for rname in row_order:
        model.add_constraint(
            [(vid, coef) for vid, coef in row_terms[rname]],
            row_sense[rname],
            row_rhs.get(rname, 0.0),
            tag=rname,
        )
    return model.canonicalize()


_MANGLED = re.compile(r"^X(\d{7})$")


def parse_name_table(text: str) -> dict[str, str]:
    """Mangled -> original name map from a sidecar table."""
    out: dict[str, str] = {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        mangled, _, original = line.partition("\t")
        if original:
            out[mangled] = original
    return out


def import_solution(
    model: MilpModel,
    text: str,
    name_map: dict[str, str] | None = None,
) -> tuple[dict[int, float], list[str]]:
    """Read a two-column 'name value' solution file.

    Names may be the model's own or the mangled export names (resolved
    through name_map or positionally).  Missing variables default to 0 with
    a warning; unknown names or unparsable values are errors.
    """
    by_name = {v.name: v.id for v in model.variables}
    assignment: dict[int, float] = {}
    warnings: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ModelError(f"solution line {lineno}: expected 'name value'")
        name, value_text = parts
        try:
            value = float(value_text)
        except ValueError:
            raise ModelError(
                f"solution line {lineno}: bad numeric value {value_text!r}"
            ) from None
        resolved = name
        if name_map and name in name_map:
            resolved = name_map[name]
        vid = by_name.get(resolved)
        if vid is None:
            m = _MANGLED.match(name)
            if m and int(m.group(1)) < len(model.variables):
                vid = int(m.group(1))
        if vid is None:
            raise ModelError(f"solution line {lineno}: unknown variable {name!r}")
        assignment[vid] = value
    missing = len(model.variables) - len(assignment)
    if missing > 0:
        warnings.append(f"{missing} variables missing from solution; defaulted to 0")
        for v in model.variables:
            assignment.setdefault(v.id, 0.0)
    return assignment, warnings
