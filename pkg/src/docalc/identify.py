"""Causal-effect identification: back-door and front-door shortcuts plus complete c-component recursion."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable

from . import graph as g
from .expr import (Estimand, Expr, Product, Quotient, Sum, Term, Var, free_variables,
                   normalize)


@dataclass(frozen=True)
class Identified:
    estimand: Estimand
    method: str
    trace: tuple[str, ...] = ()

    ok = True

    @property
    def expr(self) -> Expr:
        return self.estimand.expr


@dataclass(frozen=True)
class NonIdentifiable:
    """Failure of the recursion: ``component`` is a c-component F and ``within`` the
    sub-c-component F' ⊆ F whose do-free factor cannot be recovered (a hedge pair)."""

    component: frozenset[str]
    within: frozenset[str]
    trace: tuple[str, ...] = ()

    ok = False

    def describe(self, D: g.CausalDiagram | None = None) -> str:
        srt = D.sort if D is not None else sorted
        return (f"hedge: c-component {{{', '.join(srt(self.component))}}} "
                f"contains {{{', '.join(srt(self.within))}}} with the treatment inside")


IdentifyResult = Identified | NonIdentifiable


class _Fail(Exception):
    def __init__(self, F, Fp):
        self.F, self.Fp = F, Fp


def _prep(D: g.CausalDiagram, *sets) -> list[frozenset[str]]:
    out = [D.check(s) for s in sets]
    g._disjoint(*out)
    for s in out:
        for v in s:
            if v in D.latent:
                raise g.UnknownNode(f"{v} is latent")
    return out


def _term(outcome, given=(), do=()) -> Term:
    return Term(tuple(Var(v) for v in outcome), tuple(Var(v) for v in given), tuple(Var(v) for v in do))


# -- shortcuts ----------------------------------------------------------------------


def backdoor_admissible(D: g.CausalDiagram, X: Iterable[str], Y: Iterable[str], W: Iterable[str]) -> bool:
    """No W is a descendant of X, and W blocks every X–Y path that starts into X."""
    X, Y, W = _prep(D, X, Y, W)
    if W & g.descendants(D, X):
        return False
    return g.d_separated(g.cut_outgoing(D, X), X, Y, W).separated


def _candidate_sets(D: g.CausalDiagram, pool: Iterable[str], max_size: int):
    pool = D.sort(pool)
    for k in range(0, min(max_size, len(pool)) + 1):
        for c in itertools.combinations(pool, k):
            yield frozenset(c)


def backdoor_identify(D: g.CausalDiagram, Y, X, context=(), max_size: int = 4) -> Expr | None:
    """Σ_w P(y | x, c, w) P(w | c) for the first admissible W (smallest, canonical order)."""
    Y, X, C = _prep(D, Y, X, context)
    desc = g.descendants(D, X)
    if C & desc:
        return None
    pool = [v for v in D.observed if v not in X | Y | C | desc]
    for W in _candidate_sets(D, pool, max_size):
        if backdoor_admissible(D, X, Y, W | C):
            ys = D.sort(Y)
            first = _term(ys, D.sort(X | C | W))
            if not W:
                return normalize(first, D.nodes)
            second = _term(D.sort(W), D.sort(C))
            return normalize(Sum(D.sort(W), Product((first, second))), D.nodes)
    return None


def frontdoor_identify(D: g.CausalDiagram, X: Iterable[str], Y: Iterable[str], max_size: int = 3) -> Expr | None:
    """Σ_z P(z | x) Σ_x' P(y | x', z) P(x') through the first qualifying mediator set."""
    X, Y = _prep(D, X, Y)
    if len(X) != 1 or len(Y) != 1:
        return None
    (x,), (y,) = tuple(X), tuple(Y)
    pool = [v for v in D.observed if v not in X | Y]
    for Z in _candidate_sets(D, pool, max_size):
        if not Z:
            continue
        cut = g.induced_subgraph(D, [v for v in D.nodes if v not in Z])
        if y in g.descendants(cut, X):
            continue
        if not backdoor_admissible(D, X, Z, ()):
            continue
        if not backdoor_admissible(D, Z, Y, X):
            continue
        zs = D.sort(Z)
        inner = Sum((x,), Product((_term([y], [x] + list(zs)), _term([x]))))
        return normalize(Sum(zs, Product((_term(zs, [x]), inner))), D.nodes)
    return None


# -- complete recursion --------------------------------------------------------------


def _marg(P: Expr, keep: frozenset[str], over: frozenset[str], order) -> Expr:
    """Σ over ``over \\ keep`` of the distribution expression P (whose outcome set is ``over``)."""
    drop = over - keep
    if not drop:
        return P
    if isinstance(P, Term) and {v.name for v in P.outcome} == set(over) and not P.do:
        return P.replace(outcome=tuple(v for v in P.outcome if v.name in keep))
    return Sum(tuple(sorted(drop, key=order.index)), P)


def _cond(P: Expr, A: frozenset[str], B: frozenset[str], over: frozenset[str], order) -> Expr:
    """P(A | B) computed from a distribution expression P over ``over``."""
    if isinstance(P, Term) and {v.name for v in P.outcome} == set(over) and not P.do:
        return P.replace(outcome=tuple(Var(v) for v in sorted(A, key=order.index)),
                         given=P.given + tuple(Var(v) for v in sorted(B, key=order.index)))
    num = _marg(P, A | B, over, order)
    if not B:
        return num
    return Quotient(num, _marg(P, B, over, order))


def _id(y: frozenset, x: frozenset, P: Expr, G: g.CausalDiagram, trace: list, depth=0) -> Expr:
    V = frozenset(G.nodes)
    order = list(G.nodes)
    pad = "  " * depth
    if not x:
        trace.append(f"{pad}line 1: marginalize to {{{','.join(G.sort(y))}}}")
        return _marg(P, y, V, order)
    an = g.ancestors(G, y)
    if an != V:
        trace.append(f"{pad}line 2: restrict to ancestors of {{{','.join(G.sort(y))}}}")
        return _id(y, x & an, _marg(P, an, V, order), g.induced_subgraph(G, an), trace, depth + 1)
    w = (V - x) - g.ancestors(g.cut_incoming(G, x), y)
    if w:
        trace.append(f"{pad}line 3: add irrelevant actions {{{','.join(G.sort(w))}}}")
        return _id(y, x | w, P, G, trace, depth + 1)
    rest = g.induced_subgraph(G, V - x)
    comps = g.c_components(rest)
    if len(comps) > 1:
        trace.append(f"{pad}line 4: factorize over {len(comps)} c-components")
        factors = [_id(s, V - s, P, G, trace, depth + 1) for s in comps]
        body = Product(tuple(factors))
        drop = V - (y | x)
        return Sum(G.sort(drop), body) if drop else body
    S = comps[0]
    gcomps = g.c_components(G)
    if len(gcomps) == 1:
        trace.append(f"{pad}line 5: fail")
        raise _Fail(V, S)
    topo = list(G.topological_order)
    if S in gcomps:
        trace.append(f"{pad}line 6: {{{','.join(G.sort(S))}}} is a c-component")
        factors = []
        for v in G.sort(S):
            pre = frozenset(topo[: topo.index(v)])
            factors.append(_cond(P, frozenset({v}), pre, V, order))
        body = Product(tuple(factors)) if len(factors) > 1 else factors[0]
        drop = S - y
        return Sum(G.sort(drop), body) if drop else body
    Sp = next(c for c in gcomps if S < c)
    trace.append(f"{pad}line 7: recurse into c-component {{{','.join(G.sort(Sp))}}}")
    factors = []
    for v in G.sort(Sp):
        pre = frozenset(topo[: topo.index(v)])
        factors.append(_cond(P, frozenset({v}), pre, V, order))
    newP = Product(tuple(factors)) if len(factors) > 1 else factors[0]
    # the product of conditionals is a distribution over Sp with the other predecessors fixed
    return _id(y, x & Sp, newP, g.induced_subgraph(G, Sp), trace, depth + 1)


def _idc(y, x, z, G: g.CausalDiagram, trace: list) -> Expr:
    for v in G.sort(z):
        mut = g.cut_outgoing(g.cut_incoming(G, x), {v})
        if g.d_separated(mut, y, {v}, x | (z - {v})).separated:
            trace.append(f"move {v} from observation to action")
            return _idc(y, x | {v}, z - {v}, G, trace)
    joint = _term(G.nodes)
    P = _id(y | z, x, joint, G, trace)
    if not z:
        return P
    return Quotient(P, Sum(G.sort(y), P))


def id_algorithm(D: g.CausalDiagram, Y, X, context=()) -> IdentifyResult:
    """Complete identification of P(y | do(x), context) on the latent projection of D."""
    Y, X, C = _prep(D, Y, X, context)
    G = g.latent_projection(D)
    trace: list[str] = []
    try:
        e = _idc(Y, X, C, G, trace)
    except _Fail as f:
        return NonIdentifiable(frozenset(f.F), frozenset(f.Fp), tuple(trace))
    # actions added as irrelevant stay free in the result, which does not depend on
    # their values; averaging against their observational marginal closes the estimand
    extra = free_variables(e) - (Y | X | C)
    if extra:
        trace.append(f"average out irrelevant actions {{{','.join(D.sort(extra))}}}")
        e = Sum(D.sort(extra), Product((_term(D.sort(extra)), e)))
    return Identified(Estimand(normalize(e, D.nodes)), "id", tuple(trace))


def identify_effect(D: g.CausalDiagram, Y, X, context=()) -> IdentifyResult:
    """P(y | do(x), context): back-door, then front-door, then the complete recursion."""
    Y, X, C = _prep(D, Y, X, context)
    e = backdoor_identify(D, Y, X, C)
    if e is not None:
        return Identified(Estimand(e), "backdoor")
    if not C:
        e = frontdoor_identify(D, X, Y)
        if e is not None:
            return Identified(Estimand(e), "frontdoor")
    return id_algorithm(D, Y, X, C)
