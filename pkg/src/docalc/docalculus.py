"""The three do-calculus rules as certified rewrites, and a bounded derivation search."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Literal, Sequence

from . import graph as g
from .expr import (Expr, Product, Sum, Term, Var, canonical_json, free_variables, get_at,
                   is_do_free, normalize, render, replace_at, walk, walk_terms)

RuleId = Literal["R1", "R2", "R3"]
RULES: tuple[str, ...] = ("R1", "R2", "R3")
MOVES: tuple[str, ...] = ("R1", "R2", "R3", "condition-split", "marginalize", "bayes")


class CertificateMismatch(ValueError):
    pass


class StaleCertificate(ValueError):
    pass


class PatternNotFound(ValueError):
    pass


class MalformedGoal(ValueError):
    pass


class NotFound(Exception):
    """No derivation reaching the goal exists within the explored space."""

    def __init__(self, message: str, stats: dict | None = None):
        super().__init__(message)
        self.stats = stats or {}


class BudgetExhausted(NotFound):
    """Search stopped at its depth or width limit with states still unexplored."""


@dataclass(frozen=True)
class RuleBinding:
    X: frozenset[str] = frozenset()
    Y: frozenset[str] = frozenset()
    Z: frozenset[str] = frozenset()
    W: frozenset[str] = frozenset()
    direction: Literal["forward", "backward"] = "forward"

    def __post_init__(self):
        for k in "XYZW":
            object.__setattr__(self, k, frozenset(getattr(self, k)))
        if self.direction not in ("forward", "backward"):
            raise ValueError(f"bad direction {self.direction!r}")

    def to_dict(self, D: g.CausalDiagram | None = None) -> dict:
        srt = D.sort if D is not None else sorted
        return {k: list(srt(getattr(self, k))) for k in "XYZW"} | {"direction": self.direction}


def rule_graph(D: g.CausalDiagram, rule: str, b: RuleBinding) -> tuple[g.CausalDiagram, str]:
    """The mutilated diagram on which the rule's side condition is tested."""
    if rule == "R1":
        return g.cut_incoming(D, b.X), _tag("X̄", b.X, D)
    if rule == "R2":
        return g.cut_outgoing(g.cut_incoming(D, b.X), b.Z), _tag("X̄", b.X, D) + _tag("Z̲", b.Z, D)
    if rule == "R3":
        zw = g.rule3_zw(D, b.X, b.Z, b.W)
        return g.cut_incoming(D, b.X | zw), _tag("X̄", b.X | zw, D)
    raise ValueError(f"unknown rule {rule!r}")


def _tag(mark: str, S, D) -> str:
    return f"[{mark}:{','.join(D.sort(S))}]" if S else ""


def rule_applicable(D: g.CausalDiagram, rule: str, b: RuleBinding) -> g.SeparationCertificate:
    """Certificate for (Y ⊥ Z | X ∪ W) on the rule's mutilated graph."""
    for s in (b.X, b.Y, b.Z, b.W):
        D.check(s)
    g._disjoint(b.X, b.Y, b.Z, b.W)
    G, tag = rule_graph(D, rule, b)
    return g.d_separated(G, b.Y, b.Z, b.X | b.W, graph_tag="G" + tag)


def _check_certificate(D, rule, b, cert):
    G, _ = rule_graph(D, rule, b)
    if cert.graph != G:
        raise StaleCertificate("certificate was computed on a different diagram")
    want = (G.sort(b.Y), G.sort(b.Z), G.sort(b.X | b.W))
    if (cert.A, cert.B, cert.C) != want:
        raise CertificateMismatch(f"certificate answers {cert.describe()}, not the query of {rule}")
    if not cert.separated:
        raise CertificateMismatch(f"{rule} is not licensed: {cert.describe()}")


def _names(vs) -> frozenset[str]:
    return frozenset(v.name for v in vs)


def _rewrite_term(t: Term, rule: str, b: RuleBinding) -> Term | None:
    """Apply the rule's equality to one term, or None when the term does not match."""
    out, giv, do = _names(t.outcome), _names(t.given), _names(t.do)
    if out != b.Y:
        return None
    fwd = b.direction == "forward"
    if rule == "R1":
        if do != b.X:
            return None
        if fwd and giv == b.W | b.Z:
            return t.replace(given=tuple(v for v in t.given if v.name not in b.Z))
        if not fwd and giv == b.W:
            return t.replace(given=t.given + tuple(Var(z) for z in sorted(b.Z)))
    elif rule == "R2":
        if fwd and do == b.X | b.Z and giv == b.W:
            return t.replace(do=tuple(v for v in t.do if v.name not in b.Z),
                             given=t.given + tuple(v for v in t.do if v.name in b.Z))
        if not fwd and do == b.X and giv == b.W | b.Z:
            return t.replace(given=tuple(v for v in t.given if v.name not in b.Z),
                             do=t.do + tuple(v for v in t.given if v.name in b.Z))
    elif rule == "R3":
        if giv != b.W:
            return None
        if fwd and do == b.X | b.Z:
            return t.replace(do=tuple(v for v in t.do if v.name not in b.Z))
        if not fwd and do == b.X:
            return t.replace(do=t.do + tuple(Var(z) for z in sorted(b.Z)))
    return None


def apply_rule(D: g.CausalDiagram, e: Expr, rule: str, b: RuleBinding,
               cert: g.SeparationCertificate, path: Sequence[int] | None = None) -> Expr:
    """Rewrite the first matching term (or the one at ``path``) and normalize."""
    _check_certificate(D, rule, b, cert)
    sites = [(p, t) for p, t, _ in walk_terms(e)] if path is None else [(tuple(path), get_at(e, path))]
    for p, t in sites:
        if not isinstance(t, Term):
            continue
        new = _rewrite_term(t, rule, b)
        if new is not None:
            return normalize(replace_at(e, p, new), D.nodes)
    raise PatternNotFound(f"no term of {render(e)} matches {rule} {b.direction}")


# -- derivations ---------------------------------------------------------------------


@dataclass(frozen=True)
class DerivationStep:
    rule: str
    binding: RuleBinding | dict
    before: Expr
    after: Expr
    certificate: g.SeparationCertificate | None = None
    path: tuple[int, ...] = ()

    def to_dict(self, D: g.CausalDiagram) -> dict:
        b = self.binding.to_dict(D) if isinstance(self.binding, RuleBinding) else dict(self.binding)
        return {
            "rule": self.rule,
            "binding": b,
            "path": list(self.path),
            "certificate": None if self.certificate is None else self.certificate.describe(),
            "before": render(self.before),
            "after": render(self.after),
        }


@dataclass(frozen=True)
class Derivation:
    diagram: g.CausalDiagram
    start: Expr
    end: Expr
    steps: tuple[DerivationStep, ...] = ()

    def replay(self) -> Expr:
        """Re-check every certificate and re-apply every step; returns the end expression."""
        e = normalize(self.start, self.diagram.nodes)
        for s in self.steps:
            if canonical_json(s.before) != canonical_json(e):
                raise ValueError("derivation steps do not chain")
            if s.rule in RULES:
                again = rule_applicable(self.diagram, s.rule, s.binding)
                if not again.separated or again != s.certificate:
                    raise CertificateMismatch(f"certificate of step {s.rule} does not re-verify")
                e = apply_rule(self.diagram, e, s.rule, s.binding, s.certificate, s.path)
            else:
                e = _apply_axiom(self.diagram, e, s.rule, s.binding, s.path)
            if canonical_json(s.after) != canonical_json(e):
                raise ValueError(f"step {s.rule} does not reproduce its recorded result")
        if canonical_json(e) != canonical_json(normalize(self.end, self.diagram.nodes)):
            raise ValueError("derivation does not end at its recorded end")
        return e

    def to_dict(self) -> dict:
        return {"start": render(self.start), "end": render(self.end),
                "steps": [s.to_dict(self.diagram) for s in self.steps]}


# -- axiom moves --------------------------------------------------------------------


def _apply_axiom(D, e: Expr, move: str, params: dict, path) -> Expr:
    node = get_at(e, path)
    if move == "condition-split":
        b = params["var"]
        if not isinstance(node, Term) or b in node.names:
            raise PatternNotFound("condition-split needs a term not mentioning the variable")
        left = node.replace(given=node.given + (Var(b),))
        right = Term((Var(b),), node.given, node.do, node.pop)
        new = Sum((b,), Product((left, right)))
    elif move == "marginalize":
        b = params["var"]
        if not (isinstance(node, Sum) and b in node.over):
            raise PatternNotFound("marginalize needs a sum over the variable")
        new = _marginalize(node, b)
        if new is None:
            raise PatternNotFound(f"{b} is not marginalizable here")
    elif move == "bayes":
        i, j = params["factors"]
        if not isinstance(node, Product):
            raise PatternNotFound("bayes needs a product")
        merged = _bayes_pair(node.factors[i], node.factors[j])
        if merged is None:
            raise PatternNotFound("factors do not chain")
        rest = [f for k, f in enumerate(node.factors) if k not in (i, j)]
        new = Product(tuple(rest) + (merged,)) if rest else merged
    else:
        raise ValueError(f"unknown move {move!r}")
    return normalize(replace_at(e, path, new), D.nodes)


def _marginalize(node: Sum, b: str) -> Expr | None:
    body = node.body
    factors = body.factors if isinstance(body, Product) else (body,)
    hits = [i for i, f in enumerate(factors) if b in free_variables(f)]
    if len(hits) != 1:
        return None
    t = factors[hits[0]]
    if not isinstance(t, Term):
        return None
    if b not in _names(v for v in t.outcome if not v.bound) or len(t.outcome) < 2:
        return None
    t2 = t.replace(outcome=tuple(v for v in t.outcome if v.name != b))
    fs = list(factors)
    fs[hits[0]] = t2
    inner = Product(tuple(fs)) if len(fs) > 1 else fs[0]
    rest = tuple(v for v in node.over if v != b)
    return Sum(rest, inner) if rest else inner


def _bayes_pair(a: Expr, b: Expr) -> Term | None:
    """P(a | b, c) · P(b | c) → P(a, b | c) (same population and do-set)."""
    if not (isinstance(a, Term) and isinstance(b, Term)):
        return None
    if a.pop != b.pop or set(a.do) != set(b.do):
        return None
    if not set(b.outcome) <= set(a.given):
        return None
    if set(a.given) - set(b.outcome) != set(b.given):
        return None
    return Term(a.outcome + b.outcome, b.given, a.do, a.pop)


# -- search ---------------------------------------------------------------------------


def _subsets(items: Sequence[str], max_size: int, min_size: int = 1):
    for k in range(min_size, max_size + 1):
        yield from itertools.combinations(items, k)


@dataclass
class _Node:
    expr: Expr
    key: str
    depth: int
    parent: "_Node | None" = None
    step: DerivationStep | None = None


@dataclass
class SearchContext:
    D: g.CausalDiagram
    selection: frozenset[str] = frozenset()
    max_rule_set: int = 2
    cert_cache: dict = field(default_factory=dict)

    def cert(self, rule, b):
        k = (rule, b)
        if k not in self.cert_cache:
            self.cert_cache[k] = rule_applicable(self.D, rule, b)
        return self.cert_cache[k]


def _moves(ctx: SearchContext, e: Expr) -> Iterable[tuple[str, RuleBinding | dict, tuple, g.SeparationCertificate | None]]:
    """Candidate moves in the fixed order: rules R1, R2, R3 then the axiom moves."""
    D = ctx.D
    sort = D.sort
    observed = [v for v in D.observed]
    free_e = free_variables(e)
    sites = list(walk_terms(e))

    def term_sets(t):
        return _names(t.outcome), _names(t.given), _names(t.do)

    for rule in RULES:
        for p, t, scope in sites:
            Y, Wg, Xd = term_sets(t)
            available = [v for v in observed if v not in t.names and (v in scope or v in free_e)]
            if rule == "R1":
                for Z in _subsets(sort(Wg), ctx.max_rule_set):
                    b = RuleBinding(Xd, Y, frozenset(Z), Wg - set(Z), "forward")
                    yield rule, b, p, None
                for z in available:
                    if z in ctx.selection:
                        continue
                    yield rule, RuleBinding(Xd, Y, frozenset({z}), Wg, "backward"), p, None
            elif rule == "R2":
                for Z in _subsets(sort(Xd), ctx.max_rule_set):
                    yield rule, RuleBinding(Xd - set(Z), Y, frozenset(Z), Wg, "forward"), p, None
                for z in sort(Wg):
                    if z in ctx.selection:
                        continue
                    yield rule, RuleBinding(Xd, Y, frozenset({z}), Wg - {z}, "backward"), p, None
            else:
                for Z in _subsets(sort(Xd), ctx.max_rule_set):
                    yield rule, RuleBinding(Xd - set(Z), Y, frozenset(Z), Wg, "forward"), p, None
                for z in available:
                    if z in ctx.selection:
                        continue
                    yield rule, RuleBinding(Xd, Y, frozenset({z}), Wg, "backward"), p, None
    for p, t, scope in sites:
        for v in observed:
            if v in t.names or v in ctx.selection:
                continue
            yield "condition-split", {"var": v}, p, None
    for p, node in walk(e):
        if isinstance(node, Sum):
            for v in node.over:
                if _marginalize(node, v) is not None:
                    yield "marginalize", {"var": v}, p, None
    for p, node in walk(e):
        if isinstance(node, Product):
            n = len(node.factors)
            for i in range(n):
                for j in range(n):
                    if i != j and _bayes_pair(node.factors[i], node.factors[j]) is not None:
                        yield "bayes", {"factors": [i, j]}, p, None


def _expand(ctx: SearchContext, e: Expr):
    for move, b, p, _ in _moves(ctx, e):
        if move in RULES:
            cert = ctx.cert(move, b)
            if not cert.separated:
                continue
            new = _rewrite_term(get_at(e, p), move, b)
            if new is None:
                continue
            after = normalize(replace_at(e, p, new), ctx.D.nodes)
            yield DerivationStep(move, b, e, after, cert, p)
        else:
            try:
                after = _apply_axiom(ctx.D, e, move, b, p)
            except PatternNotFound:
                continue
            yield DerivationStep(move, b, e, after, None, p)


def _heuristic(e: Expr) -> tuple:
    ts = [t for _, t, _ in walk_terms(e)]
    n_do = sum(len(t.do) for t in ts)
    return (n_do, len(ts), len(canonical_json(e)))


Goal = Callable[[Expr], bool]


def goal_do_free(e: Expr) -> bool:
    return is_do_free(e)


def goal_s_sound(selection: Iterable[str]) -> Goal:
    """Every term mentioning a selection variable is do-free."""
    S = frozenset(selection)

    def ok(e: Expr) -> bool:
        return all(not t.do for _, t, _ in walk_terms(e) if t.names & S)

    return ok


def goal_s_free(selection: Iterable[str]) -> Goal:
    S = frozenset(selection)
    return lambda e: all(not (t.names & S) for _, t, _ in walk_terms(e))


def goal_match(target: Expr, order=None) -> Goal:
    want = canonical_json(normalize(target, order))
    return lambda e: canonical_json(e) == want


def _resolve_goal(goal, D, selection) -> Goal:
    if callable(goal):
        return goal
    if goal == "do-free":
        return goal_do_free
    if goal == "s-sound":
        return goal_s_sound(selection)
    if goal == "s-free":
        return goal_s_free(selection)
    if isinstance(goal, (Term, Sum, Product)):
        return goal_match(goal, D.nodes)
    raise MalformedGoal(f"unknown goal {goal!r}")


def _default_rank(e: Expr, depth: int) -> tuple:
    return (depth, _heuristic(e))


def derive(
    D: g.CausalDiagram,
    start: Expr,
    goal="do-free",
    *,
    selection: Iterable[str] = (),
    max_depth: int = 8,
    width: int = 512,
    rank: Callable[[Expr, int], tuple] | None = None,
    satisfied: Callable[[Expr], bool] | None = None,
) -> Derivation:
    """Breadth-first search over rule and axiom moves.

    Each level is deduplicated by normal form, ordered by a stable heuristic
    (fewest do-operators, fewest terms, shortest) and capped at ``width``.
    The search stops after the first level containing a goal state that also
    passes ``satisfied`` (default: any goal), and returns the goal state of
    least ``rank`` among all goals seen.
    """
    selection = frozenset(selection)
    ok = _resolve_goal(goal, D, selection)
    rank = rank or _default_rank
    satisfied = satisfied or (lambda e: True)
    ctx = SearchContext(D, selection)
    e0 = normalize(start, D.nodes)
    root = _Node(e0, canonical_json(e0), 0)
    seen = {root.key}
    goals: list[_Node] = []
    level = [root]
    truncated = False
    explored = 1
    for depth in range(max_depth + 1):
        done = False
        for n in level:
            if ok(n.expr):
                goals.append(n)
                done = done or satisfied(n.expr)
        if done or depth == max_depth:
            break
        nxt: list[_Node] = []
        for n in level:
            for step in _expand(ctx, n.expr):
                k = canonical_json(step.after)
                if k in seen:
                    continue
                seen.add(k)
                nxt.append(_Node(step.after, k, depth + 1, n, step))
        explored += len(nxt)
        nxt.sort(key=lambda n: _heuristic(n.expr))
        if len(nxt) > width:
            truncated = True
            nxt = nxt[:width]
        if not nxt:
            break
        level = nxt
    else:  # pragma: no cover
        pass
    if goals:
        best = min(goals, key=lambda n: (rank(n.expr, n.depth), n.key))
        steps = []
        n = best
        while n.parent is not None:
            steps.append(n.step)
            n = n.parent
        return Derivation(D, start, best.expr, tuple(reversed(steps)))
    stats = {"explored": explored, "max_depth": max_depth, "width": width, "last_level": len(level)}
    if truncated or (level and level[0].depth == max_depth):
        raise BudgetExhausted("no derivation found within budget", stats)
    raise NotFound("search space exhausted without reaching the goal", stats)
