import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from docalc.dsl import parse_expr
from docalc.expr import (Difference, Estimand, Expectation, MalformedExpr, P, Product, Quotient, Sum, Term,
                         Var, canonical_json, equivalent, expand_expectations, free_variables, normalize,
                         parse_structured, render, to_structured, validate)
from docalc.graph import CausalDiagram
from docalc.oracle import eval_estimand, random_scm

NAMES = ("A", "B", "C", "D")
ENV_D = CausalDiagram(NAMES, frozenset({("A", "B"), ("B", "C"), ("A", "D")}), frozenset({frozenset({"B", "D"})}))
ENV = {"src": random_scm(ENV_D, seed=3), "tgt": random_scm(ENV_D, seed=4)}

SETTINGS = settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@st.composite
def terms(draw):
    roles = draw(st.lists(st.integers(0, 3), min_size=4, max_size=4))
    if 0 not in roles:
        roles[draw(st.integers(0, 3))] = 0

    def part(i):
        out = []
        for n, r in zip(NAMES, roles):
            if r == i:
                out.append(Var(n, draw(st.sampled_from([None, None, 0, 1]))))
        return tuple(out)

    return Term(part(0), part(1), part(2), draw(st.sampled_from(["src", "tgt"])))


@st.composite
def exprs(draw, depth=3):
    if depth == 0 or draw(st.integers(0, 2)) == 0:
        return draw(terms())
    kind = draw(st.sampled_from(["sum", "prod", "quot", "diff", "exp"]))
    a = draw(exprs(depth - 1))
    if kind == "sum":
        free = sorted(free_variables(a))
        if not free:
            return a
        over = draw(st.lists(st.sampled_from(free), min_size=1, max_size=2, unique=True))
        return Sum(tuple(over), a)
    if kind == "exp":
        free = sorted(free_variables(a))
        return Expectation(draw(st.sampled_from(free)), a) if free else a
    b = draw(exprs(depth - 1))
    return {"prod": lambda: Product((a, b)), "quot": lambda: Quotient(a, b),
            "diff": lambda: Difference(a, b)}[kind]()


def _assign(e, data):
    return {v: data.draw(st.integers(0, 1)) for v in sorted(free_variables(e))}


# -- examples -------------------------------------------------------------------------------


def test_normalize_merges_sums():
    f = P("Y", given=["Z", "W"])
    assert normalize(Sum(("Z",), Sum(("W",), f)), NAMES) == normalize(Sum(("W", "Z"), f), NAMES)
    assert render(normalize(Sum(("Z",), Sum(("W",), f)))) == "Σ_{w,z} P(y | w, z)"


def test_normalize_drops_trivial_sums():
    assert normalize(Sum(("Z",), P("Z", given="X"))).__class__.__name__ == "Const"


def test_eq7_round_trip():
    e = parse_expr("Σ_z P(y | do(x), z) P*(z)", ["Z", "X", "Y"])
    assert render(normalize(e)) == "Σ_z P(y | do(x), z) P*(z)"
    assert free_variables(e) == {"Y", "X"}


def test_free_variables_examples():
    assert free_variables(P("Y", do="X")) == {"Y", "X"}
    eq6 = parse_expr("Σ_{m,w2,w3} P(w2, w3) [E(Y | X=1, m, w3) - E(Y | X=0, m, w3)] P(m | X=0, w2)",
                     ["X", "M", "Y", "W2", "W3"])
    assert free_variables(eq6) == frozenset()


def test_equivalent_examples():
    a = Sum(("Z",), Product((P("Z"), P("Y", given="Z"))))
    b = Sum(("Z",), Product((P("Y", given="Z"), P("Z"))))
    assert equivalent(a, b)
    assert not equivalent(P("Y", do="X"), P("Y", given="X"))


def test_render_examples():
    assert render(P("Y", do="X")) == "P(y | do(x))"
    assert render(parse_expr("Σ_z P(y | z, x) P*(z | x)")) == "Σ_z P(y | z, x) P*(z | x)"
    assert render(P("Y", given="W", do="X", pop="h")) == "P_h(y | do(x), w)"
    assert "\\sum" in render(Sum(("Z",), P("Y", given="Z")), "latex")


def test_estimand_flags():
    e = Product((P("Y", do="X", pop="h"), P("Z", pop="tgt")))
    est = Estimand(e)
    assert not est.do_free and est.populations_used == {"h", "tgt"}
    assert Estimand(P("Y", given="X")).do_free


def test_term_invariants():
    with pytest.raises(MalformedExpr):
        Term((), (Var("X"),))
    with pytest.raises(MalformedExpr):
        Term((Var("X"),), (Var("X"),))
    with pytest.raises(MalformedExpr):
        validate(Sum(("Q",), P("Y")))


# -- properties ---------------------------------------------------------------------------------


@SETTINGS
@given(exprs())
def test_normalize_idempotent(e):
    n = normalize(e, NAMES)
    assert normalize(n, NAMES) == n


@settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(exprs(), st.data())
def test_normalize_preserves_value(e, data):
    a = _assign(e, data)
    n = normalize(e, NAMES)
    assert abs(eval_estimand(e, ENV, a) - eval_estimand(n, ENV, a)) <= 1e-12
    x = expand_expectations(e)
    assert abs(eval_estimand(e, ENV, a) - eval_estimand(x, ENV, a)) <= 1e-12


@SETTINGS
@given(exprs())
def test_structured_round_trip(e):
    assert parse_structured(render(e, "structured")) == e
    assert parse_expr(canonical_json(e)) == e
    assert to_structured(parse_structured(canonical_json(e))) == to_structured(e)


@SETTINGS
@given(exprs())
def test_text_round_trip(e):
    n = normalize(e, NAMES)
    assert equivalent(parse_expr(render(n), NAMES), n)


@SETTINGS
@given(exprs(depth=2), exprs(depth=2), exprs(depth=2))
def test_equivalence_relation(a, b, c):
    assert equivalent(a, a)
    assert equivalent(a, b) == equivalent(b, a)
    if equivalent(a, b) and equivalent(b, c):
        assert equivalent(a, c)
    assert equivalent(a, normalize(a))
