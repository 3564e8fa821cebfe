import itertools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parkflow.milp import (
    BINARY,
    CONTINUOUS,
    EQ,
    GE,
    LE,
    LinExpr,
    MilpModel,
    ModelError,
    add_indicator_link,
    add_product_bin_bin,
    add_product_bin_cont,
    add_indicator_link as _,
    complement,
    export_model,
    import_solution,
    name_table,
    parse_mps,
    parse_name_table,
)


def eval_terms(terms, point):
    return sum(c * point.get(vid, 0.0) for vid, c in terms)


def holds(con, point, tol=1e-9):
    lhs = eval_terms(con.terms, point)
    if con.sense == LE:
        return lhs <= con.rhs + tol
    if con.sense == GE:
        return lhs >= con.rhs - tol
    return abs(lhs - con.rhs) <= tol


def feasible_w(model, point, w, candidates=(0.0, 0.25, 0.5, 0.75, 1.0)):
    """Values of w admitted by every constraint at the given point."""
    out = []
    for value in candidates:
        point[w.id] = value
        if all(holds(c, point) for c in model.constraints):
            out.append(value)
    del point[w.id]
    return out


def test_product_bin_cont_truth_table():
    u = 10.0
    for b_val in (0.0, 1.0):
        for f_val in (0.0, 3.7, 10.0):
            m = MilpModel()
            b = m.add_variable("b", BINARY)
            f = m.add_variable("f", CONTINUOUS, upper=u)
            w = add_product_bin_cont(m, b, f, u)
            point = {b.id: b_val, f.id: f_val}
            admitted = feasible_w(m, point, w, candidates=(0.0, 1.85, 3.7, 5.0, u))
            assert admitted == [b_val * f_val]


def test_product_bin_cont_pins_exact_value():
    # at integral b the rows force w = b*f exactly
    for b_val, f_val in itertools.product((0.0, 1.0), (0.0, 1.23, 7.0, 10.0)):
        m = MilpModel()
        b = m.add_variable("b", BINARY)
        f = m.add_variable("f", CONTINUOUS, upper=10.0)
        w = add_product_bin_cont(m, b, f, 10.0)
        point = {b.id: b_val, f.id: f_val, w.id: b_val * f_val}
        assert all(holds(c, point) for c in m.constraints)
        # any other value violates some row
        for wrong in (0.0, 1.23, 7.0, 10.0):
            if wrong == b_val * f_val:
                continue
            point[w.id] = wrong
            assert not all(holds(c, point) for c in m.constraints)


def test_product_bin_cont_accepts_expression():
    # binary-valued sum of two exclusive binaries works as the b input
    m = MilpModel()
    b1 = m.add_variable("b1", BINARY)
    b2 = m.add_variable("b2", BINARY)
    f = m.add_variable("f", CONTINUOUS, upper=5.0)
    expr = LinExpr(terms=((b1.id, 1.0), (b2.id, 1.0)))
    w = add_product_bin_cont(m, expr, f, 5.0)
    point = {b1.id: 0.0, b2.id: 1.0, f.id: 4.0, w.id: 4.0}
    assert all(holds(c, point) for c in m.constraints)
    point = {b1.id: 0.0, b2.id: 0.0, f.id: 4.0, w.id: 0.0}
    assert all(holds(c, point) for c in m.constraints)
    point[w.id] = 4.0
    assert not all(holds(c, point) for c in m.constraints)


def test_product_bin_cont_rejects_bad_bounds():
    m = MilpModel()
    b = m.add_variable("b", BINARY)
    f = m.add_variable("f", CONTINUOUS, upper=5.0)
    with pytest.raises(ModelError):
        add_product_bin_cont(m, b, f, math.inf)
    g = m.add_variable("g", CONTINUOUS, lower=-1.0, upper=5.0)
    with pytest.raises(ModelError):
        add_product_bin_cont(m, b, g, 5.0)


def test_product_bin_bin_truth_table():
    for v1, v2 in itertools.product((0.0, 1.0), repeat=2):
        m = MilpModel()
        b1 = m.add_variable("b1", BINARY)
        b2 = m.add_variable("b2", BINARY)
        w = add_product_bin_bin(m, b1, b2)
        assert w.implied_integral
        point = {b1.id: v1, b2.id: v2, w.id: v1 * v2}
        assert all(holds(c, point) for c in m.constraints)
        point[w.id] = 1.0 - v1 * v2
        assert not all(holds(c, point) for c in m.constraints)


def test_product_bin_bin_with_complement():
    # w = b1 AND (1 - b2)
    for v1, v2 in itertools.product((0.0, 1.0), repeat=2):
        m = MilpModel()
        b1 = m.add_variable("b1", BINARY)
        b2 = m.add_variable("b2", BINARY)
        w = add_product_bin_bin(m, b1, complement(b2))
        point = {b1.id: v1, b2.id: v2, w.id: v1 * (1.0 - v2)}
        assert all(holds(c, point) for c in m.constraints)
        point[w.id] = 1.0 - v1 * (1.0 - v2)
        assert not all(holds(c, point) for c in m.constraints)


def test_indicator_link_truth_table():
    # y = 1 iff at least one of three binaries is set: all 8 cases
    for bits in itertools.product((0.0, 1.0), repeat=3):
        m = MilpModel()
        xs = [m.add_variable(f"x{i}", BINARY) for i in range(3)]
        y = m.add_variable("y", BINARY)
        add_indicator_link(m, y, xs)
        assert m.variables[y.id].implied_integral
        want = 1.0 if any(bits) else 0.0
        point = {x.id: v for x, v in zip(xs, bits)}
        point[y.id] = want
        assert all(holds(c, point) for c in m.constraints)
        point[y.id] = 1.0 - want
        assert not all(holds(c, point) for c in m.constraints)


def test_indicator_link_pins_lp_relaxation():
    # per-element rows force y >= x_i even fractionally
    m = MilpModel()
    xs = [m.add_variable(f"x{i}", BINARY) for i in range(2)]
    y = m.add_variable("y", BINARY)
    add_indicator_link(m, y, xs)
    point = {xs[0].id: 1.0, xs[1].id: 0.0, y.id: 0.5}
    assert not all(holds(c, point) for c in m.constraints)


def test_indicator_link_requires_elements():
    m = MilpModel()
    y = m.add_variable("y", BINARY)
    with pytest.raises(ModelError):
        add_indicator_link(m, y, [])


def test_canonicalize_merges_and_sorts():
    m = MilpModel()
    a = m.add_variable("a")
    b = m.add_variable("b")
    m.add_constraint([(b, 1.0), (a, 2.0), (b, -1.0), (a, 1.0)], LE, 4.0)
    m.canonicalize()
    assert m.constraints[0].terms == ((a.id, 3.0),)
    again = [c.terms for c in m.canonicalize().constraints]
    assert again == [c.terms for c in m.constraints]


def test_objective_value():
    m = MilpModel()
    a = m.add_variable("a")
    b = m.add_variable("b")
    m.add_objective(a, 2.0)
    m.add_objective(b, -1.0)
    m.add_objective(a, 0.5)
    m.add_objective_constant(10.0)
    assert m.objective_value({a.id: 2.0, b.id: 3.0}) == pytest.approx(12.0)


def small_model():
    m = MilpModel(name="small")
    x = m.add_variable("x", BINARY)
    y = m.add_variable("y", CONTINUOUS, lower=0.0, upper=4.0)
    z = m.add_variable("z", CONTINUOUS, lower=-math.inf, upper=math.inf)
    fx = m.add_variable("fx", CONTINUOUS)
    m.fix_variable(fx, 2.5)
    m.add_constraint([(x, 1.0), (y, 2.0)], LE, 5.0, tag="cap")
    m.add_constraint([(y, 1.0), (z, -1.0)], EQ, 1.0, tag="bal")
    m.add_constraint([(x, 3.0), (z, 1.0)], GE, -2.0, tag="low")
    m.add_objective(x, 7.0)
    m.add_objective(y, 1.5)
    m.add_objective_constant(100.0)
    return m, (x, y, z, fx)


def test_export_is_deterministic():
    m1, _ = small_model()
    m2, _ = small_model()
    assert export_model(m1) == export_model(m2)
    assert name_table(m1) == name_table(m2)


def test_export_parse_roundtrip():
    m, (x, y, z, fx) = small_model()
    text = export_model(m)
    back = parse_mps(text)
    assert len(back.variables) == len(m.variables)
    assert len(back.constraints) == len(m.constraints)
    assert [v.kind for v in back.variables] == [v.kind for v in m.variables]
    assert back.objective_constant == m.objective_constant
    # senses, bounds and terms survive (modulo name mangling)
    assert [c.sense for c in back.constraints] == [c.sense for c in m.constraints]
    assert [c.rhs for c in back.constraints] == [c.rhs for c in m.constraints]
    assert [c.terms for c in back.constraints] == [c.terms for c in m.constraints]
    assert back.variables[y.id].upper == 4.0
    assert math.isinf(back.variables[z.id].lower)
    assert back.variables[fx.id].lower == back.variables[fx.id].upper == 2.5
    point = {x.id: 1.0, y.id: 2.0, z.id: 1.0, fx.id: 2.5}
    assert back.objective_value(point) == pytest.approx(m.objective_value(point))


@settings(max_examples=30, deadline=None)
@given(values=st.lists(
    st.floats(min_value=-1e7, max_value=1e7, allow_nan=False).map(lambda v: round(v, 6)),
    min_size=1, max_size=6))
def test_export_preserves_full_precision(values):
    m = MilpModel()
    xs = [m.add_variable(f"x{i}") for i in range(len(values))]
    m.add_constraint([(x, v) for x, v in zip(xs, values) if v != 0.0], LE, sum(values))
    for x, v in zip(xs, values):
        m.add_objective(x, v)
    back = parse_mps(export_model(m))
    assert back.constraints[0].terms == m.canonicalize().constraints[0].terms
    assert back.objective == m.objective


def test_name_table_sidecar():
    m, _ = small_model()
    table = parse_name_table(name_table(m))
    assert table["X0000000"] == "x"
    assert table["R0000000"] == "cap[0]"


def test_import_solution_accepts_original_and_mangled_names():
    m, (x, y, z, fx) = small_model()
    sol = "x 1\nX0000001 2.0\nz 1.0\nfx 2.5\n"
    assignment, warnings = import_solution(m, sol)
    assert warnings == []
    assert assignment == {x.id: 1.0, y.id: 2.0, z.id: 1.0, fx.id: 2.5}


def test_import_solution_missing_defaults_with_warning():
    m, (x, y, z, fx) = small_model()
    assignment, warnings = import_solution(m, "x 1\n")
    assert assignment[x.id] == 1.0
    assert assignment[y.id] == 0.0
    assert len(warnings) == 1 and "missing" in warnings[0]


def test_import_solution_unknown_name_is_error():
    m, _ = small_model()
    with pytest.raises(ModelError, match="unknown variable"):
        import_solution(m, "nope 1\n")


def test_import_solution_bad_value_is_error():
    m, _ = small_model()
    with pytest.raises(ModelError, match="bad numeric"):
        import_solution(m, "x one\n")


def test_import_solution_comments_and_blank_lines():
    m, (x, *_rest) = small_model()
    text = "# solver log\n\nx 1  # chosen\n"
    assignment, _warnings = import_solution(m, text)
    assert assignment[x.id] == 1.0
