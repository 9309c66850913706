"""Selection diagrams, transport formulas, invariance of terms, and multi-study synthesis."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import graph as g
from .docalculus import (BudgetExhausted, Derivation, NotFound, derive, goal_s_sound)
from .expr import (Estimand, canonical_json, Expr, Product, Quotient, Sum, Term, Var, free_variables, normalize,
                   render, walk_terms, replace_at)

TARGET = "tgt"


@dataclass(frozen=True)
class SelectionDiagram:
    """A causal diagram plus selection nodes, each pointing at exactly one variable."""

    base: g.CausalDiagram
    selection_edges: frozenset[tuple[str, str]] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "selection_edges", frozenset(tuple(e) for e in self.selection_edges))
        seen = set()
        for s, v in self.selection_edges:
            if s in self.base.index:
                raise g.DiagramError(f"selection node {s} collides with a variable")
            if s in seen:
                raise g.DiagramError(f"selection node {s} points at more than one variable")
            seen.add(s)
            if v not in self.base.index:
                raise g.UnknownNode(f"unknown node {v!r}")

    @property
    def selection_nodes(self) -> tuple[str, ...]:
        edges = sorted(self.selection_edges, key=lambda e: (self.base.index[e[1]], e[0]))
        return tuple(s for s, _ in edges)

    @property
    def pointed(self) -> frozenset[str]:
        return frozenset(v for _, v in self.selection_edges)

    def as_causal(self) -> g.CausalDiagram:
        """Selection nodes become ordinary observed root nodes, appended after the base nodes."""
        B = self.base
        return g.CausalDiagram(B.nodes + self.selection_nodes, B.directed | self.selection_edges,
                               B.bidirected, B.latent)

    def s_given(self) -> tuple[Var, ...]:
        return tuple(Var(s, 1) for s in self.selection_nodes)


def attach_selection(base: g.CausalDiagram, targets: Iterable[str], prefix: str = "S") -> SelectionDiagram:
    """One fresh selection node ``<prefix>_<V>`` per target variable."""
    targets = base.check(targets)
    taken = set(base.nodes)
    edges = []
    for v in base.sort(targets):
        name = f"{prefix}_{v}"
        while name in taken:
            name += "'"
        taken.add(name)
        edges.append((name, v))
    return SelectionDiagram(base, frozenset(edges))


# -- transport formulas ---------------------------------------------------------------


@dataclass(frozen=True)
class TransportFormula:
    expr: Expr
    derivation: Derivation

    ok = True

    @property
    def estimand(self) -> Estimand:
        return Estimand(self.expr)


@dataclass(frozen=True)
class NotTransportable:
    reason: str
    stats: dict = field(default_factory=dict)

    ok = False


def theorem_shape(e: Expr) -> bool:
    """Every target-population term is do-free."""
    return all(not t.do for _, t, _ in walk_terms(e) if t.pop == TARGET)


def _retag(e: Expr, S: frozenset[str], source: str, order) -> Expr:
    """S-conditioned terms become target terms without S; the others take ``source``."""
    out = e
    for p, t, _ in list(walk_terms(e)):
        if t.names & S:
            new = t.replace(given=tuple(v for v in t.given if v.name not in S), pop=TARGET)
        else:
            new = t.replace(pop=source)
        out = replace_at(out, p, new)
    return normalize(out, order)


def _transport_rank(Y: frozenset[str], S: frozenset[str]):
    def rank(e: Expr, depth: int) -> tuple:
        ts = [t for _, t, _ in walk_terms(e)]
        tgt = [t for t in ts if t.names & S]
        return (any(t.names & Y for t in tgt), depth,
                sum(len(t.names - S) for t in tgt), sum(len(t.do) for t in ts))
    return rank


def transport_effect(SD: SelectionDiagram, Y: Iterable[str], X: Iterable[str], *, source: str = "src",
                     max_depth: int = 8, width: int = 512) -> TransportFormula | NotTransportable:
    """Reduce P*(y | do(x)) to source experiments plus do-free target terms.

    Among reductions, prefers ones whose target terms avoid the outcome, then
    shorter derivations, then fewer target variables, then fewer actions.
    """
    B = SD.base
    Y, X = B.check(Y), B.check(X)
    g._disjoint(Y, X)
    D = SD.as_causal()
    S = frozenset(SD.selection_nodes)
    start = Term(tuple(Var(v) for v in B.sort(Y)), SD.s_given(), tuple(Var(v) for v in B.sort(X)))
    rank = _transport_rank(Y, S)
    try:
        d = derive(D, start, goal_s_sound(S), selection=S, max_depth=max_depth, width=width,
                   rank=rank, satisfied=lambda e: not rank(e, 0)[0])
    except BudgetExhausted as ex:
        return NotTransportable("not found within budget", ex.stats)
    except NotFound as ex:
        return NotTransportable("search space exhausted without a reduction", ex.stats)
    return TransportFormula(_retag(d.end, S, source, D.nodes), d)


def invariant_term(SD: SelectionDiagram, t: Term) -> bool:
    """P_source(t) = P*(t): selection nodes are separated from the outcome given the
    observations and actions, with arrows into the acted-on variables removed."""
    D = SD.as_causal()
    out = D.check(v.name for v in t.outcome)
    giv = D.check(v.name for v in t.given)
    do = D.check(v.name for v in t.do)
    S = frozenset(SD.selection_nodes) - giv - do
    if not S:
        return True
    G = g.cut_incoming(D, do)
    return g.d_separated(G, out, S, giv | do).separated


# -- studies and synthesis --------------------------------------------------------------


@dataclass(frozen=True)
class StudyDescriptor:
    label: str
    diagram: SelectionDiagram
    regime: tuple[str, ...] = ()  # empty: observational; otherwise the randomized variables
    measured: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "regime", tuple(self.regime))
        B = self.diagram.base
        meas = frozenset(self.measured) if self.measured else frozenset(B.observed)
        object.__setattr__(self, "measured", meas)
        B.check(meas)
        for v in meas:
            if v in B.latent:
                raise g.DiagramError(f"latent variable {v} cannot be measured")
        if not set(self.regime) <= meas:
            raise g.DiagramError("randomized variables must be measured")

    @property
    def observational(self) -> bool:
        return not self.regime

    def supplies(self, t: Term) -> bool:
        """Whether the study's data determine term t (in its own population)."""
        if not t.names <= self.measured:
            return False
        do = {v.name for v in t.do}
        if self.observational:
            return not do
        R = set(self.regime)
        if do:
            return do == R
        # a do-free term survives randomization only away from the randomized variables' descendants
        return not (t.names & g.descendants(self.diagram.base, R))


@dataclass(frozen=True)
class SubRelation:
    relation: Term
    study: str
    formula: Expr


@dataclass(frozen=True)
class SynthesisPlan:
    target: Term
    shape: str
    sub_relations: tuple[SubRelation, ...]
    composition: Expr
    contributions: dict = field(default_factory=dict, hash=False, compare=False)

    ok = True

    @property
    def estimand(self) -> Estimand:
        return Estimand(self.composition)


@dataclass(frozen=True)
class Unsynthesizable:
    uncovered: tuple[Term, ...]
    contributions: dict = field(default_factory=dict, hash=False, compare=False)

    ok = False


def _decompositions(D: g.CausalDiagram, R: Term, measured: frozenset[str], max_size: int = 2):
    """(shape, sub-relations, composition) in order: raw relation, back-door adjustments,
    mediator factorizations; smaller sets first, canonical order."""
    from .identify import backdoor_admissible

    Y = frozenset(v.name for v in R.outcome)
    X = frozenset(v.name for v in R.do)
    C = frozenset(v.name for v in R.given)
    yield "raw", (R,), R
    if not X:
        return
    pool = [v for v in D.observed if v not in X | Y | C and v in measured]
    desc = g.descendants(D, X)
    for k in range(1, max_size + 1):
        for Wt in itertools.combinations([v for v in pool if v not in desc], k):
            W = frozenset(Wt)
            if C & desc or not backdoor_admissible(D, X, Y, W | C):
                continue
            a = Term(R.outcome, R.given + tuple(Var(v) for v in D.sort(X | W)), pop=R.pop)
            b = Term(tuple(Var(w) for w in Wt), R.given, pop=R.pop)
            yield "back-door", (a, b), Sum(Wt, Product((a, b)))
    for k in range(1, max_size + 1):
        for Wt in itertools.combinations(pool, k):
            a = Term(R.outcome, R.given + tuple(Var(w) for w in Wt), R.do, R.pop)
            b = Term(tuple(Var(w) for w in Wt), R.given, R.do, R.pop)
            yield "mediator", (a, b), Sum(Wt, Product((a, b)))


def _from_study(st: StudyDescriptor, t: Term, max_depth: int, width: int) -> Expr | None:
    """An expression for target-population t using only the study's data, or None."""
    SD = st.diagram
    if st.supplies(t) and invariant_term(SD, t):
        return t.replace(pop=st.label)
    D = SD.as_causal()
    S = frozenset(SD.selection_nodes)
    if not S:
        return None
    start = t.replace(given=t.given + SD.s_given(), pop="src")

    def ok(e: Expr) -> bool:
        return all(not (u.names & S) and st.supplies(u) for _, u, _ in walk_terms(e))

    try:
        d = derive(D, start, ok, selection=S, max_depth=max_depth, width=width)
    except NotFound:
        return None
    return _retag(d.end, S, st.label, D.nodes)


def meta_synthesize(target: g.CausalDiagram, R: Term, studies: Sequence[StudyDescriptor], *,
                    max_depth: int = 4, width: int = 128) -> SynthesisPlan | Unsynthesizable:
    """First decomposition of R whose every sub-relation some study can supply.

    Studies are tried in input order. The target population contributes no data.
    """
    measured = frozenset().union(*(st.measured for st in studies)) if studies else frozenset()
    contributions: dict[str, dict[str, list[str]]] = {st.label: {"can": [], "cannot": []} for st in studies}
    uncovered: list[Term] = []
    cache: dict[tuple[str, str], Expr | None] = {}
    for shape, subs, comp in _decompositions(target, R, measured):
        chosen = []
        missing = []
        for t in subs:
            hit = None
            for st in studies:
                key = (st.label, canonical_json(t))
                if key not in cache:
                    cache[key] = _from_study(st, t, max_depth, width)
                    bucket = "can" if cache[key] is not None else "cannot"
                    contributions[st.label][bucket].append(render(t))
                if cache[key] is not None:
                    hit = SubRelation(t, st.label, cache[key])
                    break
            if hit is None:
                missing.append(t)
            else:
                chosen.append(hit)
        if not missing:
            e = comp
            for sr in chosen:
                for p, u, _ in list(walk_terms(e)):
                    if u == sr.relation:
                        e = replace_at(e, p, sr.formula)
                        break
            return SynthesisPlan(R, shape, tuple(chosen), normalize(e, target.nodes), contributions)
        for t in missing:
            if t not in uncovered:
                uncovered.append(t)
    return Unsynthesizable(tuple(uncovered), contributions)


# -- knowledge-guided adaptation ------------------------------------------------------------


@dataclass(frozen=True)
class AdaptationPlan:
    query: Term
    factors: tuple[tuple[Term, str], ...]  # (factor, "source" | "target")
    answer: Expr
    target_measurements: frozenset[str]

    ok = True


def adapt_factorization(SD: SelectionDiagram, query: Term) -> AdaptationPlan:
    """Factor the relevant joint along the diagram, re-learning only non-invariant mechanisms."""
    B = SD.base
    if B.latent or B.bidirected:
        raise g.DiagramError("adaptation needs a diagram without latent confounders")
    qv = B.check(v.name for v in query.outcome + query.given)
    if query.do:
        raise g.DiagramError("adaptation answers observational target queries")
    relevant = g.ancestors(B, qv)
    factors = []
    for v in B.topological_order:
        if v not in relevant:
            continue
        t = Term((Var(v),), tuple(Var(p) for p in B.parents(v)))
        tag = "source" if invariant_term(SD, t) else "target"
        factors.append((t.replace(pop="src" if tag == "source" else TARGET), tag))
    joint = Product(tuple(f for f, _ in factors)) if len(factors) > 1 else factors[0][0]
    out = frozenset(v.name for v in query.outcome)
    giv = frozenset(v.name for v in query.given)
    hidden = relevant - out - giv
    num = Sum(B.sort(hidden), joint) if hidden else joint
    if giv:
        den_hidden = relevant - giv
        answer = Quotient(num, Sum(B.sort(den_hidden), joint))
    else:
        answer = num
    # bind the query's pinned values
    vals = {v.name: v.value for v in query.outcome + query.given if v.bound}
    if vals:
        from .expr import substitute
        answer = substitute(answer, vals)
    need = frozenset().union(*(f.names for f, tag in factors if tag == "target")) if factors else frozenset()
    return AdaptationPlan(query, tuple(factors), normalize(answer, B.nodes), need)
