"""Acceptance criteria 1-10. Each test records one pass/fail line, printed in the
terminal summary (or directly when this file is run as a script)."""

from __future__ import annotations

import os
import subprocess
import sys
import time

import pytest

import helpers
import sweep
from docalc import corpus
from docalc.docalculus import NotFound, derive
from docalc.dsl import parse_expr
from docalc.expr import Term, Var, equivalent, expand_expectations, normalize, render
from docalc.identify import identify_effect
from docalc.mediation import MediationQuery, check_set_A, check_set_B, nde_estimand
from docalc.oracle import (conditional_table, eval_estimand, eval_nde, falsify_identifiability,
                           random_scm, total_variation)
from docalc.transport import (TARGET, adapt_factorization, invariant_term, meta_synthesize,
                              transport_effect)

SEEDS = range(20)
TOL = 1e-9
Q = MediationQuery("X", "M", "Y")


def _p(text, names):
    return parse_expr(text, names)


def test_criterion_01_rule_soundness():
    t0 = time.perf_counter()
    checked, bad = sweep.sweep(n_models=20, tol=TOL)
    dt = time.perf_counter() - t0
    helpers.record(1, not bad and checked > 0 and dt <= 300,
                   f"{checked} applicable rule instances x 20 models, {len(bad)} violations, {dt:.1f}s")
    assert not bad, bad[:5]
    assert dt <= 300


TRANSPORT_FORMS = {
    "fig7a": "Σ_z P(y | do(x), z) P*(z)",
    "fig7b": "P(y | do(x))",
    "fig7b_ux": "P(y | do(x))",
    "fig7c": "Σ_z P(y | z, x) P*(z | x)",
}


def test_criterion_02_transport_formulas():
    notes, ok = [], True
    for name, want_text in TRANSPORT_FORMS.items():
        SD = corpus.load(name)
        r = transport_effect(SD, {"Y"}, {"X"})
        want = _p(want_text, SD.base.nodes)
        same = r.ok and equivalent(normalize(r.expr, SD.base.nodes), normalize(want, SD.base.nodes))
        gap = 0.0
        if r.ok:
            for s in SEEDS:
                src, tgt = helpers.paired_models(SD, s)
                gap = max(gap, helpers.effect_gap(r.expr, {"src": src, TARGET: tgt}, tgt, ["Y"], ["X"]))
        ok &= same and gap <= TOL
        notes.append(f"{name}:{'=' if same else '!='} gap {gap:.1e}")
    helpers.record(2, ok, "; ".join(notes))
    assert ok, notes


SPLIT_SET_NDE = "Σ_{m,w2,w3} P(w2, w3) [E(Y | X=1, m, w3) - E(Y | X=0, m, w3)] P(m | X=0, w2)"


def test_criterion_03_nde_split_sets():
    D = corpus.load("fig2")
    r = nde_estimand(D, Q)
    got = normalize(expand_expectations(r.expr), D.nodes)
    want = normalize(expand_expectations(_p(SPLIT_SET_NDE, D.nodes)), D.nodes)
    same = equivalent(got, want)
    gap = want_gap = 0.0
    for s in SEEDS:
        M = random_scm(D, seed=s)
        truth = eval_nde(M, Q)
        gap = max(gap, abs(eval_estimand(r.expr, M) - truth))
        want_gap = max(want_gap, abs(eval_estimand(want, M) - truth))
    helpers.record(3, same and gap <= TOL,
                   f"syntactic match {'yes' if same else 'no'} (engine: {render(r.expr)}); "
                   f"engine vs oracle {gap:.1e}; reference form vs oracle {want_gap:.1e}")
    assert gap <= TOL
    assert same, f"engine returned {render(r.expr)}"


def test_criterion_04_assumption_contrast():
    D = corpus.load("fig2")
    a = check_set_A(D, Q, (), w_mediator={"W2"}, w_outcome={"W3"})
    b = [check_set_B(D, Q, W).holds for W in [(), ("W2",), ("W3",), ("W2", "W3")]]
    D3 = corpus.load("fig3")
    b3 = check_set_B(D3, Q, ())
    r3 = nde_estimand(D3, Q)
    via = r3.report.condition("A-3").detail.method
    ok = (a.holds and not any(b) and not b3.condition("B-2").holds and b3.condition("B-1").holds
          and b3.condition("B-3").holds and r3.ok and via == "frontdoor")
    helpers.record(4, ok, f"fig2 A {a.overall}, B holds for {sum(b)}/4 sets; fig3 B-2 "
                          f"{b3.condition('B-2').holds}, NDE via {via}")
    assert ok


def test_criterion_05_nde_coverage():
    notes, ok = [], True
    for name in ("fig1a", "fig1b", "fig3", "fig4", "fig5", "fig6"):
        D = corpus.load(name)
        r = nde_estimand(D, Q)
        gap = max(abs(eval_estimand(r.expr, M) - eval_nde(M, Q))
                  for M in (random_scm(D, seed=s) for s in SEEDS))
        ok &= r.ok and gap <= TOL
        notes.append(f"{name} {gap:.1e}")
    helpers.record(5, ok, "; ".join(notes))
    assert ok, notes


def test_criterion_06_frontier():
    D1 = corpus.load("fig1b")
    r1 = identify_effect(D1, {"Y"}, {"X"})
    bd = r1.ok and r1.method == "backdoor" and equivalent(r1.expr, _p("Σ_w P(y | w, x) P(w)", D1.nodes))
    D3 = corpus.load("fig3")
    r3 = identify_effect(D3, {"M"}, {"X"})
    fd = r3.ok and r3.method == "frontdoor" and equivalent(
        r3.expr, _p("Σ_z P(z | x) Σ_x' P(m | x', z) P(x')", D3.nodes))
    B = corpus.load("bow")
    rb = identify_effect(B, {"Y"}, {"X"})
    t0 = time.perf_counter()
    pair = falsify_identifiability(B, Term((Var("Y"),), (), (Var("X"),)))
    dt = time.perf_counter() - t0
    tv = gap = float("nan")
    if pair is not None:
        M1, M2 = pair
        tv = total_variation(M1, M2)
        T1, T2 = conditional_table(M1, {"X"}, {"Y"}), conditional_table(M2, {"X"}, {"Y"})
        gap = helpers.max_abs(T1, T2)
    ok = bd and fd and not rb.ok and pair is not None and tv <= TOL and gap >= 0.05
    helpers.record(6, ok, f"back-door {bd}, front-door {fd}, bow non-identifiable {not rb.ok}, "
                          f"witness TV {tv:.1e} gap {gap:.3f} in {dt:.1f}s")
    assert ok


def test_criterion_07_meta_synthesis():
    base, studies = corpus.load("fig8")
    by = {st.label: st for st in studies}
    R = Term((Var("Y"),), (), (Var("X"),))
    hi = [by["h"], by["i"]]
    plan = meta_synthesize(base, R, hi)
    want = _p("Σ_w P_h(y | w, do(x)) P_i(w | do(x))", base.nodes)
    same = plan.ok and equivalent(normalize(plan.composition, base.nodes), normalize(want, base.nodes))
    gap = 0.0
    if plan.ok:
        for s in SEEDS:
            env = helpers.study_models(base, hi, s)
            gap = max(gap, helpers.effect_gap(plan.composition, env, env["tgt"], ["Y"], ["X"]))
    cef = meta_synthesize(base, R, [by["c"], by["e"], by["f"]])
    SDc = by["c"].diagram
    cands = {"P(z)": Term((Var("Z"),)), "P(x | z)": Term((Var("X"),), (Var("Z"),)),
             "P(y | z, x)": Term((Var("Y"),), (Var("Z"), Var("X")))}
    inv = {k for k, t in cands.items() if invariant_term(SDc, t)}
    ok = same and gap <= TOL and not cef.ok and inv == {"P(x | z)", "P(y | z, x)"}
    helpers.record(7, ok, f"{{h,i}} plan {'=' if same else '!='} target form, gap {gap:.1e}; "
                          f"{{c,e,f}} {'synthesizable' if cef.ok else 'unsynthesizable'}; "
                          f"invariant under c: {sorted(inv)}")
    assert ok


def test_criterion_08_adaptation():
    SD = corpus.load("adapt_chain")
    q = Term((Var("X"),), (Var("Z"),))
    plan = adapt_factorization(SD, q)
    tags = {render(f): tag for f, tag in plan.factors}
    want_tags = {"P(x)": "source", "P*(y | x)": "target", "P(z | y)": "source"}
    gap = 0.0
    for s in SEEDS:
        src, tgt = helpers.paired_models(SD, s)
        truth = conditional_table(tgt, (), {"X"}, {"Z"})
        for x in (0, 1):
            for z in (0, 1):
                got = eval_estimand(plan.answer, {"src": src, TARGET: tgt}, {"X": x, "Z": z})
                gap = max(gap, abs(got - float(truth[x, 0, z])))
    ok = tags == want_tags and gap <= TOL and "Z" not in plan.target_measurements
    helpers.record(8, ok, f"factors {tags}; gap {gap:.1e}; target measures "
                          f"{sorted(plan.target_measurements)}")
    assert ok


CROSS_QUERIES = {
    "fig1a": [("Y", "X"), ("M", "X"), ("Y", "X,M")],
    "fig1b": [("Y", "X"), ("M", "X"), ("Y", "X,M")],
    "fig2": [("Y", "X"), ("M", "X"), ("Y", "X,M")],
    "fig3": [("Y", "X"), ("M", "X"), ("Y", "X,M")],
    "fig4": [("Y", "X"), ("M", "X"), ("Y", "X,M")],
    "fig5": [("Y", "X"), ("M", "X"), ("Y", "X,M")],
    "fig6": [("Y", "X"), ("M", "X"), ("Y", "X,M")],
    "bow": [("Y", "X")],
    "chain": [("Y", "X"), ("Z", "X"), ("Z", "Y")],
    "collider": [("Y", "X"), ("X", "Z")],
    "fig7a": [("Y", "X")],
    "fig7c": [("Y", "X")],
}


def test_criterion_09_cross_engine():
    compared, skipped, worst, ok = 0, 0, 0.0, True
    for name, qs in CROSS_QUERIES.items():
        D = corpus.load(name)
        D = getattr(D, "base", D)
        models = [random_scm(D, seed=s) for s in SEEDS]
        for y, xs in qs:
            X = xs.split(",")
            start = Term((Var(y),), (), tuple(Var(x) for x in X))
            r = identify_effect(D, {y}, set(X))
            try:
                d = derive(D, start)
            except NotFound:
                skipped += 1
                continue
            if not r.ok:
                ok = False  # derive found a do-free form the complete algorithm rejects
                continue
            compared += 1
            for M in models:
                worst = max(worst, helpers.expr_gap(d.end, r.expr, M, [y] + X))
    ok &= compared > 0 and worst <= TOL
    helpers.record(9, ok, f"{compared} queries compared on 20 models each, max gap {worst:.1e}; "
                          f"{skipped} left to the complete algorithm (derive budget)")
    assert ok


def _cli_commands():
    f = lambda n: str(corpus.path(n))  # noqa: E731
    return [
        ["identify", "--graph", f("fig1b"), "--effect", "P(y | do(x))"],
        ["identify", "--graph", f("fig3"), "--effect", "P(m | do(x))"],
        ["identify", "--graph", f("bow"), "--effect", "P(y | do(x))"],
        ["identify", "--graph", f("fig1b"), "--effect", "P(y | do(x))", "--engine", "derive", "--trace"],
        ["transport", "--graph", f("fig7a"), "--effect", "P(y | do(x))", "--trace"],
        ["transport", "--graph", f("fig7b"), "--effect", "P(y | do(x))"],
        ["transport", "--graph", f("fig7c"), "--effect", "P(y | do(x))"],
        ["mediate", "--graph", f("fig2")],
        ["mediate", "--graph", f("fig2"), "--assumptions", "A", "--W-mediator", "W2", "--W-outcome", "W3"],
        ["mediate", "--graph", f("fig2"), "--assumptions", "B", "--W", "W2,W3"],
        ["mediate", "--graph", f("fig3")],
        ["mediate", "--graph", f("fig1b"), "--cde"],
        ["synthesize", "--studies", f("fig8"), "--effect", "P(y | do(x))", "--use", "h,i"],
        ["synthesize", "--studies", f("fig8"), "--effect", "P(y | do(x))", "--use", "c,e,f"],
        ["adapt", "--graph", f("adapt_chain"), "--query", "P(x | z)"],
        ["check-rule", "--graph", f("fig1b"), "--rule", "R2", "--bind", "X=;Y=Y;Z=X;W=W"],
        ["d-sep", "--graph", f("fig2"), "--sets", "A=X;B=M;C=W2,W3"],
    ]


def _run_cli(argv, hashseed):
    env = dict(os.environ, PYTHONHASHSEED=str(hashseed))
    p = subprocess.run([sys.executable, "-m", "docalc.cli", *argv, "--format", "structured"],
                       capture_output=True, env=env)
    return p.returncode, p.stdout


def test_criterion_10_cli_determinism():
    diffs = []
    cmds = _cli_commands()
    for argv in cmds:
        first = _run_cli(argv, 1)
        second = _run_cli(argv, 12345)
        if first != second or not first[1]:
            diffs.append(argv[0] + " " + argv[2].rsplit("/", 1)[-1])
    helpers.record(10, not diffs, f"{len(cmds)} commands run twice with different hash seeds, "
                                  f"{len(diffs)} differ {diffs if diffs else ''}".rstrip())
    assert not diffs


if __name__ == "__main__":
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    sys.exit(code)
