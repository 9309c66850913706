"""Controlled and natural direct effects: assumption checks and estimand composition."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Iterable

from . import graph as g
from .expr import (Difference, Estimand, Expr, Product, Sum, Term, Var, expectation, normalize,
                   substitute)
from .identify import Identified, NonIdentifiable, backdoor_admissible, identify_effect


@dataclass(frozen=True)
class MediationQuery:
    X: str
    M: str
    Y: str
    x_active: int = 1
    x_ref: int = 0

    def validate(self, D: g.CausalDiagram) -> None:
        D.check({self.X, self.M, self.Y})
        if len({self.X, self.M, self.Y}) != 3:
            raise g.OverlappingSets("treatment, mediator and outcome must be distinct")
        if self.M not in g.descendants(D, {self.X}) or self.Y not in g.descendants(D, {self.M}):
            warnings.warn("mediator is not between treatment and outcome in the diagram", stacklevel=3)


class SearchExhausted(Exception):
    def __init__(self, reports: list):
        super().__init__(f"no covariate set satisfies the assumptions ({len(reports)} tried)")
        self.reports = reports


@dataclass(frozen=True)
class ConditionResult:
    name: str
    holds: bool
    detail: object = None

    def describe(self) -> str:
        d = self.detail
        if isinstance(d, g.SeparationCertificate):
            d = d.describe()
        elif isinstance(d, Identified):
            d = f"identified ({d.method})"
        elif isinstance(d, NonIdentifiable):
            d = d.describe()
        return f"{self.name}: {'holds' if self.holds else 'fails'}" + (f" [{d}]" if d else "")


@dataclass(frozen=True)
class AssumptionReport:
    set_name: str
    W_used: tuple[frozenset[str], ...]
    conditions: tuple[ConditionResult, ...]

    @property
    def holds(self) -> bool:
        return all(c.holds for c in self.conditions)

    @property
    def overall(self) -> str:
        return "holds" if self.holds else "fails"

    def condition(self, name: str) -> ConditionResult:
        return next(c for c in self.conditions if c.name == name)

    def describe(self, D: g.CausalDiagram | None = None) -> str:
        srt = D.sort if D is not None else sorted
        ws = " / ".join("{" + ",".join(srt(w)) + "}" for w in self.W_used)
        lines = [f"assumption set {self.set_name} with W = {ws}: {self.overall}"]
        lines += ["  " + c.describe() for c in self.conditions]
        return "\n".join(lines)


def _non_descendant(D, q, W, name) -> ConditionResult:
    bad = W & g.descendants(D, {q.X})
    return ConditionResult(name, not bad, f"descendants of {q.X}: {','.join(D.sort(bad))}" if bad else None)


def mediator_outcome_blocked(D: g.CausalDiagram, q: MediationQuery, W: Iterable[str]) -> g.SeparationCertificate:
    """M–Y back-door paths, disregarding those through X, are blocked by W.

    Tested as (M ⊥ Y | W) with M's outgoing edges cut and X removed, which
    conditions on X without letting it act as an opened collider.
    """
    W = D.check(W)
    keep = [v for v in D.nodes if v != q.X]
    G = g.induced_subgraph(g.cut_outgoing(D, {q.M}), keep)
    return g.d_separated(G, {q.M}, {q.Y}, W, graph_tag=f"G[{q.M}̲,-{q.X}]")


def check_set_A(D: g.CausalDiagram, q: MediationQuery, W: Iterable[str] = (),
                w_mediator: Iterable[str] | None = None, w_outcome: Iterable[str] | None = None) -> AssumptionReport:
    """A-1..A-4. ``w_mediator``/``w_outcome`` give separate conditioning sets for the
    W-specific effects of A-3 and A-4 (both default to ``W``)."""
    q.validate(D)
    W = D.check(W)
    Wm = W if w_mediator is None else D.check(w_mediator)
    Wy = W if w_outcome is None else D.check(w_outcome)
    conds = [_non_descendant(D, q, W | Wm | Wy, "A-1")]
    cert = mediator_outcome_blocked(D, q, W)
    conds.append(ConditionResult("A-2", cert.separated, cert))
    r3 = identify_effect(D, {q.M}, {q.X}, Wm)
    conds.append(ConditionResult("A-3", r3.ok, r3))
    r4 = identify_effect(D, {q.Y}, {q.X, q.M}, Wy)
    conds.append(ConditionResult("A-4", r4.ok, r4))
    used = (W,) if (Wm == W and Wy == W) else (W, Wm, Wy)
    return AssumptionReport("A", used, tuple(conds))


def check_set_B(D: g.CausalDiagram, q: MediationQuery, W: Iterable[str] = ()) -> AssumptionReport:
    q.validate(D)
    W = D.check(W)
    conds = [_non_descendant(D, q, W, "B-1")]
    conds.append(ConditionResult("B-2", not (W & g.descendants(D, {q.X}))
                                 and backdoor_admissible(D, {q.X}, {q.M}, W)))
    w3 = W | {q.X}
    conds.append(ConditionResult("B-3", not (W & g.descendants(D, {q.M}))
                                 and backdoor_admissible(D, {q.M}, {q.Y}, w3 - {q.M})))
    return AssumptionReport("B", (W,), tuple(conds))


def _ival(q: MediationQuery, x: int) -> dict:
    return {q.X: x}


def cde_estimand(D: g.CausalDiagram, q: MediationQuery, m: int | None = None):
    """E(Y | do(x_active, m)) − E(Y | do(x_ref, m)); ``m`` None leaves the mediator free."""
    q.validate(D)
    r = identify_effect(D, {q.Y}, {q.X, q.M})
    if not r.ok:
        return r
    e = r.expr
    if m is not None:
        e = substitute(e, {q.M: m})
    diff = Difference(expectation(q.Y, substitute(e, _ival(q, q.x_active))),
                      expectation(q.Y, substitute(e, _ival(q, q.x_ref))))
    return Identified(Estimand(normalize(diff, D.nodes)), r.method, r.trace)


@dataclass(frozen=True)
class NDEResult:
    estimand: Estimand
    W: frozenset[str]
    report: AssumptionReport

    ok = True

    @property
    def expr(self) -> Expr:
        return self.estimand.expr


def compose_nde(D: g.CausalDiagram, q: MediationQuery, W: frozenset[str], mediator_given_x: Expr,
                outcome_given_xm: Expr) -> Expr:
    """Σ_w P(w) Σ_m [E(Y | do(x1, m), w) − E(Y | do(x0, m), w)] · P(m | do(x0), w)."""
    hi = expectation(q.Y, substitute(outcome_given_xm, _ival(q, q.x_active)))
    lo = expectation(q.Y, substitute(outcome_given_xm, _ival(q, q.x_ref)))
    med = substitute(mediator_given_x, _ival(q, q.x_ref))
    body: Expr = Sum((q.M,), Product((Difference(hi, lo), med)))
    if W:
        ws = D.sort(W)
        body = Sum(ws, Product((Term(tuple(Var(w) for w in ws)), body)))
    return normalize(body, D.nodes)


def nde_estimand(D: g.CausalDiagram, q: MediationQuery, max_size: int = 4) -> NDEResult:
    """First covariate set (smallest, canonical order) satisfying Assumption-Set A, composed."""
    q.validate(D)
    desc = g.descendants(D, {q.X})
    pool = [v for v in D.observed if v not in desc and v not in (q.X, q.M, q.Y)]
    reports = []
    for k in range(0, min(max_size, len(pool)) + 1):
        for c in itertools.combinations(pool, k):
            W = frozenset(c)
            rep = check_set_A(D, q, W)
            reports.append(rep)
            if not rep.holds:
                continue
            med = rep.condition("A-3").detail.expr
            out = rep.condition("A-4").detail.expr
            e = compose_nde(D, q, W, med, out)
            return NDEResult(Estimand(e), W, rep)
    raise SearchExhausted(reports)
