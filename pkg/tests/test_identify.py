import itertools

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from docalc import corpus
from docalc import graph as g
from docalc.dsl import parse_graph_dsl
from docalc.expr import P, Term, Var, equivalent, free_variables, is_do_free, mentioned
from docalc.dsl import parse_expr
from docalc.identify import (backdoor_admissible, backdoor_identify, frontdoor_identify, id_algorithm,
                             identify_effect)
from docalc.oracle import falsify_identifiability, random_scm

import helpers
from test_graph import diagrams

NAPKIN = "nodes: W, Z, X, Y\nW -> Z -> X -> Y\nW <-> X\nW <-> Y"


def _queries(D):
    obs = D.observed
    for y, x in itertools.permutations(obs, 2):
        yield {y}, {x}, ()
    if {"X", "M", "Y"} <= set(obs):
        yield {"Y"}, {"X", "M"}, ()
        for c in obs:
            if c not in ("X", "M", "Y"):
                yield {"M"}, {"X"}, (c,)
                yield {"Y"}, {"X", "M"}, (c,)


def _check(D, Y, X, C, r, seeds=range(20)):
    assert is_do_free(r.expr)
    assert free_variables(r.expr) <= Y | X | set(C)
    for s in seeds:
        M = random_scm(D, seed=s)
        assert helpers.effect_gap(r.expr, M, M, sorted(Y), sorted(X), sorted(C)) <= 1e-9


def test_backdoor_admissible_examples():
    assert backdoor_admissible(corpus.load("fig1b"), {"X"}, {"Y"}, {"W"})
    assert backdoor_admissible(corpus.load("fig1a"), {"X"}, {"Y"}, ())
    assert not backdoor_admissible(corpus.load("fig2"), {"X"}, {"M"}, {"W2", "W3"})
    assert backdoor_admissible(corpus.load("fig2"), {"X"}, {"M"}, {"W2"})


def test_frontdoor_examples():
    D3 = corpus.load("fig3")
    e = frontdoor_identify(D3, {"X"}, {"M"})
    assert equivalent(e, parse_expr("Σ_z P(z | x) Σ_x' P(m | x', z) P(x')", D3.nodes))
    # the direct X -> Y edge leaves M short of intercepting every directed path
    assert frontdoor_identify(corpus.load("fig1a"), {"X"}, {"Y"}) is None
    assert frontdoor_identify(corpus.load("bow"), {"X"}, {"Y"}) is None
    chain = parse_graph_dsl("nodes: X, M, Y; X -> M -> Y")
    e = frontdoor_identify(chain, {"X"}, {"Y"})
    for s in range(5):
        M = random_scm(chain, seed=s)
        assert helpers.effect_gap(e, M, M, ["Y"], ["X"]) <= 1e-12


def test_identify_examples():
    D = corpus.load("fig1b")
    r = identify_effect(D, {"Y"}, {"X"})
    assert r.method == "backdoor" and equivalent(r.expr, parse_expr("Σ_w P(y | x, w) P(w)", D.nodes))
    bow = identify_effect(corpus.load("bow"), {"Y"}, {"X"})
    assert not bow.ok and bow.component == {"X", "Y"}
    assert "c-component" in bow.describe()
    F4 = corpus.load("fig4")
    for Y, X in [({"M"}, {"X"}), ({"Y"}, {"X", "M"})]:
        r = identify_effect(F4, Y, X, {"W"})
        assert r.ok
        _check(F4, Y, X, ("W",), r, range(5))
    F6 = corpus.load("fig6")
    r = identify_effect(F6, {"Y"}, {"X", "M"}, {"T"})
    assert r.ok and "Z" in mentioned(r.expr)
    _check(F6, {"Y"}, {"X", "M"}, ("T",), r, range(5))


def test_napkin():
    D = parse_graph_dsl(NAPKIN)
    r = identify_effect(D, {"Y"}, {"X"})
    assert r.ok and r.method == "id"
    _check(D, {"Y"}, {"X"}, (), r)


@pytest.mark.parametrize("name", ["fig1a", "fig1b", "fig2", "fig3", "fig4", "fig5", "fig6", "chain",
                                  "collider", "fig7a", "fig7c", "fig8"])
def test_oracle_soundness_on_corpus(name):
    D = corpus.load(name)
    D = getattr(D, "base", D)
    if isinstance(D, tuple):
        D = D[0]
    models = [random_scm(D, seed=s) for s in range(20)]
    for Y, X, C in _queries(D):
        r = identify_effect(D, Y, X, C)
        if not r.ok:
            continue
        for M in models:
            assert helpers.effect_gap(r.expr, M, M, sorted(Y), sorted(X), sorted(C)) <= 1e-9, (Y, X, C)


def test_backdoor_implies_adjustment_value():
    D = corpus.load("fig1b")
    adj = parse_expr("Σ_w P(y | x, w) P(w)", D.nodes)
    r = identify_effect(D, {"Y"}, {"X"})
    for s in range(10):
        M = random_scm(D, seed=s)
        assert helpers.expr_gap(r.expr, adj, M, ["Y", "X"]) <= 1e-12


def test_completeness_spot_check():
    nonid = [(corpus.load("bow"), {"Y"}, {"X"}),
             (parse_graph_dsl("nodes: X, Z, Y; X -> Z -> Y; X <-> Z"), {"Y"}, {"X"})]
    for D, Y, X in nonid:
        r = identify_effect(D, Y, X)
        assert not r.ok
        q = Term(tuple(Var(v) for v in sorted(Y)), (), tuple(Var(v) for v in sorted(X)))
        assert falsify_identifiability(D, q, budget=4000) is not None
    for name in ("fig1b", "fig3"):
        D = corpus.load(name)
        assert identify_effect(D, {"Y"}, {"X"}).ok
        assert falsify_identifiability(D, P("Y", do="X"), budget=400) is None


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(diagrams(max_nodes=5))
def test_random_diagrams_sound(D):
    x, y = D.nodes[0], D.nodes[-1]
    r = identify_effect(D, {y}, {x})
    if r.ok:
        _check(D, {y}, {x}, (), r, range(4))
    rid = id_algorithm(D, {y}, {x})
    assert rid.ok == r.ok
    if rid.ok:
        _check(D, {y}, {x}, (), rid, range(4))


@settings(max_examples=8, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(diagrams(max_nodes=3))
def test_random_nonidentifiable_have_witnesses(D):
    x, y = D.nodes[0], D.nodes[-1]
    r = identify_effect(D, {y}, {x})
    if r.ok:
        return
    assert falsify_identifiability(D, P(y, do=x), budget=6000) is not None


def test_identify_errors():
    D = corpus.load("fig1b")
    with pytest.raises(g.OverlappingSets):
        identify_effect(D, {"Y"}, {"Y"})
    with pytest.raises(g.UnknownNode):
        identify_effect(D, {"Q"}, {"X"})
