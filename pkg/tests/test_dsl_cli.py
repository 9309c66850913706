import io
import json

import pytest
from hypothesis import HealthCheck, given, settings

from docalc import corpus
from docalc import graph as g
from docalc.cli import main
from docalc.dsl import ParseError, parse_expr, parse_graph_dsl, parse_studies
from docalc.expr import equivalent, normalize, render
from docalc.oracle import eval_estimand, load_scm
from docalc.transport import SelectionDiagram

from test_graph import diagrams


def run(*argv):
    buf = io.StringIO()
    code = main(list(argv), buf)
    return code, buf.getvalue()


def test_graph_dsl_examples():
    D = parse_graph_dsl("nodes: X, M, Y\nlatent: U\nX -> M -> Y; U -> X; U -> Y  # comment")
    assert D.nodes == ("X", "M", "Y", "U") and D.latent == {"U"}
    assert D.observed == ("X", "M", "Y")
    B = parse_graph_dsl("nodes: X, Y; X -> Y; X <-> Y")
    assert frozenset({"X", "Y"}) in B.bidirected
    SD = corpus.load("fig7a")
    assert isinstance(SD, SelectionDiagram) and SD.pointed == {"Z"}


@pytest.mark.parametrize("text, exc, line", [
    ("nodes: X, Y\nX -> Q", g.UnknownNodeInEdge, 2),
    ("nodes: X, Y\nX -> Y\nY -> X", g.CycleError, 3),
    ("nodes: X, X", g.DuplicateNode, 1),
    ("nodes: X\nX -> X", g.MalformedDecl, 2),
    ("nodes: X, Y\nX -> Y; X -> Y", g.MalformedDecl, 2),
    ("nodes: X, Y\n\nX => Y", ParseError, 3),
    ("nodes: X, 1Y", ParseError, 1),
    ("nodes: X, Y; X -> Y\nS ~> Y; S ~> X", g.MalformedDecl, 2),
    ("nodes: X, Y; X -> Y\nX ~> Y", g.MalformedDecl, 2),
])
def test_graph_dsl_errors_carry_lines(text, exc, line):
    with pytest.raises(exc) as ei:
        parse_graph_dsl(text)
    assert ei.value.line == line
    assert f"line {line}" in str(ei.value)


def test_parse_error_column():
    with pytest.raises(ParseError) as ei:
        parse_graph_dsl("nodes: X, Y\nX -> Y;   bogus")
    assert ei.value.col == 11


def test_parse_studies():
    base, studies = corpus.load("fig8")
    assert base.nodes == ("Z", "X", "W", "Y")
    by = {st.label: st for st in studies}
    assert [st.label for st in studies] == ["c", "e", "f", "g", "h", "i"]
    assert by["e"].diagram.pointed == {"Z", "Y"} and by["e"].measured == set(base.observed)
    assert by["h"].regime == ("X",) and by["h"].measured == {"X", "W", "Y"}
    assert not by["g"].diagram.selection_edges
    with pytest.raises(g.MalformedDecl):
        parse_studies("nodes: X, Y\nX -> Y\nstudy a { }\nstudy a { }")
    with pytest.raises(ParseError) as ei:
        parse_studies("nodes: X, Y\nX -> Y\nstudy a { regime: sometimes }")
    assert ei.value.line == 3
    with pytest.raises(g.UnknownNode):
        parse_studies("nodes: X, Y\nX -> Y\nstudy a { select: Q }")
    with pytest.raises(ParseError):
        parse_studies("nodes: X, Y\nX -> Y\nstudy a { colour: red }")


def test_expr_parse_examples():
    names = ["Z", "X", "Y"]
    e = parse_expr("Σ_z P(y | do(x), z) P*(z)", names)
    assert render(e) == "Σ_z P(y | do(x), z) P*(z)"
    assert render(parse_expr("P_h(y | do(x), w)", ["X", "W", "Y"])) == "P_h(y | do(x), w)"
    q = parse_expr("E(Y | X=1, m) - E(Y | X=0, m)", ["X", "M", "Y"])
    assert render(q) == "E(Y | X=1, m) - E(Y | X=0, m)"
    with pytest.raises(ParseError) as ei:
        parse_expr("P(y | do(x)", names)
    assert ei.value.col is not None
    with pytest.raises(ParseError):
        parse_expr("P(q)", names)


def test_graph_text_round_trip_on_corpus():
    for name in corpus.names():
        obj = corpus.load(name)
        D = obj[0] if isinstance(obj, tuple) else getattr(obj, "base", obj)
        assert parse_graph_dsl(D.to_dsl()) == D


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(diagrams(max_nodes=6))
def test_random_graph_text_round_trip(D):
    assert parse_graph_dsl(D.to_dsl()) == D


# -- command line ------------------------------------------------------------------------


def f(name):
    return str(corpus.path(name))


def test_cli_identify():
    code, out = run("identify", "--graph", f("fig1b"), "--effect", "P(y | do(x))")
    assert code == 0
    D = corpus.load("fig1b")
    assert equivalent(normalize(parse_expr(out.strip().splitlines()[0], D.nodes), D.nodes),
                      normalize(parse_expr("Σ_w P(y | w, x) P(w)", D.nodes), D.nodes))
    code, out = run("identify", "--graph", f("bow"), "--effect", "P(y | do(x))")
    assert code == 1 and "not identifiable" in out


def test_cli_structured_payload():
    code, out = run("identify", "--graph", f("fig3"), "--effect", "P(m | do(x))", "--format", "structured")
    assert code == 0
    payload = json.loads(out)
    assert payload["status"] == "identified" and payload["method"] == "frontdoor"
    code, out = run("transport", "--graph", f("fig7a"), "--effect", "P(y | do(x))", "--format", "structured")
    assert code == 0 and json.loads(out)["command"] == "transport"


def test_cli_latex():
    code, out = run("transport", "--graph", f("fig7a"), "--effect", "P(y | do(x))", "--format", "latex")
    assert code == 0 and "\\sum" in out


def test_cli_mediate_and_checks():
    code, out = run("mediate", "--graph", f("fig2"), "--assumptions", "B", "--W", "W2,W3")
    assert code == 1
    code, _ = run("mediate", "--graph", f("fig2"), "--assumptions", "A", "--W-mediator", "W2", "--W-outcome", "W3")
    assert code == 0
    assert run("check-rule", "--graph", f("fig1b"), "--rule", "R2", "--bind", "X=;Y=Y;Z=X;W=W")[0] == 0
    assert run("check-rule", "--graph", f("bow"), "--rule", "R2", "--bind", "X=;Y=Y;Z=X;W=")[0] == 1
    assert run("d-sep", "--graph", f("fig1b"), "--sets", "A=X;B=Y;C=W")[0] == 1


def test_cli_synthesize_and_adapt():
    code, out = run("synthesize", "--studies", f("fig8"), "--effect", "P(y | do(x))", "--use", "h,i")
    assert code == 0 and "P_h" in out and "P_i" in out
    assert run("synthesize", "--studies", f("fig8"), "--effect", "P(y | do(x))", "--use", "c,e,f")[0] == 1
    assert run("synthesize", "--studies", f("fig8"), "--effect", "P(y | do(x))", "--use", "q")[0] == 2
    code, out = run("adapt", "--graph", f("adapt_chain"), "--query", "P(x | z)")
    assert code == 0 and "P*(y | x)" in out


def test_cli_make_scm_and_eval(tmp_path):
    code, text = run("make-scm", "--graph", f("fig1b"), "--seed", "3")
    assert code == 0
    p = tmp_path / "m.json"
    p.write_text(text)
    code, a = run("eval", "--scm", str(p), "--query", "Σ_w P(y | x, w) P(w)", "--assign", "X=1,Y=1")
    assert code == 0
    code, b = run("eval", "--scm", str(p), "--query", "P(y | do(x))", "--assign", "X=1,Y=1")
    assert code == 0 and abs(float(a.split()[-1]) - float(b.split()[-1])) <= 1e-12
    # the printed number is the library's, bit for bit
    M = load_scm(text)
    for q in ("Σ_w P(y | x, w) P(w)", "P(y | do(x))", "P(m | w)"):
        want = eval_estimand(parse_expr(q, M.observed), M, {"X": 1, "Y": 1, "M": 0, "W": 1})
        code, out = run("eval", "--scm", str(p), "--query", q, "--assign", "X=1,Y=1,M=0,W=1",
                        "--format", "structured")
        assert json.loads(out)["value"] == want


@pytest.mark.parametrize("argv", [
    ["identify", "--graph", "/nonexistent.cg", "--effect", "P(y | do(x))"],
    ["identify", "--effect", "P(y | do(x))"],
    ["identify", "--graph", "FIG1B", "--effect", "P(y | do(x)"],
    ["identify", "--graph", "FIG1B", "--effect", "P(q | do(x))"],
    ["frobnicate"],
    ["d-sep", "--graph", "FIG1B", "--sets", "A=X;B=Q"],
    ["eval", "--query", "P(y)"],
])
def test_cli_input_errors(argv, capsys):
    argv = [f("fig1b") if a == "FIG1B" else a for a in argv]
    code, _ = run(*argv)
    assert code == 2
    assert capsys.readouterr().err


def test_cli_bad_graph_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.cg"
    p.write_text("nodes: X, Y\nX -> Y\nY -> X\n")
    assert run("identify", "--graph", str(p), "--effect", "P(y | do(x))")[0] == 2
    assert "line 3" in capsys.readouterr().err


def _shape(D):
    order = lambda e: (D.index[e[0]], D.index[e[1]])  # noqa: E731
    return {"observed": list(D.observed), "latent": list(D.sort(D.latent)),
            "directed": sorted(map(list, D.directed), key=order),
            "bidirected": sorted(list(D.sort(e)) for e in D.bidirected)}


@pytest.mark.parametrize("name", corpus.names() + ["fig8"])
def test_fixture_matches_sidecar(name):
    want = corpus.expected(name)
    obj = corpus.load(name)
    if isinstance(obj, tuple):
        base, studies = obj
        assert {st.label: {"select": sorted(st.diagram.pointed), "regime": list(st.regime),
                           "measured": list(base.sort(st.measured))} for st in studies} == want["studies"]
        flag = "--studies"
    elif isinstance(obj, SelectionDiagram):
        base = obj.base
        assert dict(sorted(obj.selection_edges)) == want["selection"]
        flag = "--graph"
    else:
        base, flag = obj, "--graph"
    assert {k: want[k] for k in ("observed", "latent", "directed", "bidirected")} == _shape(base)
    assert want["commands"]
    for cmd in want["commands"]:
        argv = cmd["argv"][:1] + [flag, f(name)] + cmd["argv"][1:]
        code, out = run(*argv)
        assert code == cmd["exit"], argv
        if "output" in cmd:
            assert out.splitlines()[0] == cmd["output"], argv


def test_cli_structured_is_stable():
    argv = ["mediate", "--graph", f("fig2"), "--format", "structured"]
    assert run(*argv) == run(*argv)
