"""Oracle comparisons shared across the test modules."""

from __future__ import annotations

import itertools

import numpy as np

from docalc import graph as g
from docalc.expr import Expr
from docalc.oracle import conditional_table, eval_estimand, random_scm, restrict
from docalc.transport import SelectionDiagram, StudyDescriptor

# criterion number -> (passed, detail); printed by the terminal-summary hook
CRITERIA: dict[int, tuple[bool, str]] = {}


def record(n: int, ok: bool, detail: str) -> None:
    CRITERIA[n] = (bool(ok), detail)


def criteria_lines() -> list[str]:
    return [f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}" for n, (ok, detail) in sorted(CRITERIA.items())]


def effect_gap(e: Expr, env, truth, Y, X, C=()) -> float:
    """max |e - P_truth(Y | do(X), C)| over every assignment of X, Y, C."""
    Y, X, C = list(Y), list(X), list(C)
    T = conditional_table(truth, X, Y, C)
    obs = truth.observed
    names = [v for v in obs if v in set(X) | set(Y) | set(C)]
    worst = 0.0
    for combo in itertools.product(*(range(truth.card(v)) for v in names)):
        a = dict(zip(names, combo))
        idx = tuple(a.get(v, 0) for v in obs)
        got = eval_estimand(e, env, a)
        worst = max(worst, abs(got - float(T[idx])))
    return worst


def paired_models(SD: SelectionDiagram, seed: int):
    """(source, target) models that differ only in the mechanisms selection nodes point at."""
    M = random_scm(SD.as_causal(), seed=seed)
    S = SD.selection_nodes
    return restrict(M, {s: 0 for s in S}), restrict(M, {s: 1 for s in S})


def study_models(base: g.CausalDiagram, studies: list[StudyDescriptor], seed: int):
    """One joint model over the base plus every study's selection nodes (renamed per
    study). The target sets all of them to 1; study k sets its own to 0."""
    edges = []
    own: dict[str, list[str]] = {}
    for st in studies:
        own[st.label] = []
        for s, v in sorted(st.diagram.selection_edges):
            name = f"{s}_{st.label}"
            edges.append((name, v))
            own[st.label].append(name)
    allS = [s for s, _ in edges]
    D = g.CausalDiagram(base.nodes + tuple(allS), base.directed | frozenset(edges), base.bidirected, base.latent)
    M = random_scm(D, seed=seed)
    env = {"tgt": restrict(M, {s: 1 for s in allS})}
    for st in studies:
        env[st.label] = restrict(M, {s: 0 if s in own[st.label] else 1 for s in allS})
    return env


def expr_gap(a: Expr, b: Expr, env, names, card=2) -> float:
    """max |a - b| over every assignment of ``names``."""
    worst = 0.0
    for combo in itertools.product(range(card), repeat=len(names)):
        asg = dict(zip(names, combo))
        worst = max(worst, abs(eval_estimand(a, env, asg) - eval_estimand(b, env, asg)))
    return worst


def max_abs(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
