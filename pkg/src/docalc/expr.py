"""Symbolic probability expressions: terms, sums, products, quotients, differences.

Variables inside a term are either free (``Var("Y")``, rendered ``y``) or pinned
to a value (``Var("X", 0)``, rendered ``X=0``). A ``Sum`` binds its variables
lexically, so a nested sum may shadow a free variable of the same name; the
renderer primes shadowing names (``Σ_x' ...``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence, Union


class MalformedExpr(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Var:
    name: str
    value: int | None = None

    @property
    def bound(self) -> bool:
        return self.value is not None


def as_var(v: Union[str, Var, tuple]) -> Var:
    if isinstance(v, Var):
        return v
    if isinstance(v, tuple):
        return Var(v[0], v[1])
    if "=" in v:
        name, val = v.split("=", 1)
        return Var(name.strip(), int(val))
    return Var(v)


def _vars(vs) -> tuple[Var, ...]:
    if isinstance(vs, (str, Var)):
        vs = [vs]
    return tuple(as_var(v) for v in vs)


@dataclass(frozen=True)
class Term:
    """P_pop(outcome | given, do(do))."""

    outcome: tuple[Var, ...]
    given: tuple[Var, ...] = ()
    do: tuple[Var, ...] = ()
    pop: str = "src"

    def __post_init__(self):
        object.__setattr__(self, "outcome", _vars(self.outcome))
        object.__setattr__(self, "given", _vars(self.given))
        object.__setattr__(self, "do", _vars(self.do))
        if not self.outcome:
            raise MalformedExpr("term needs a non-empty outcome")
        names = [v.name for v in self.outcome + self.given + self.do]
        if len(names) != len(set(names)):
            raise MalformedExpr(f"term variable sets overlap: {names}")
        if not self.pop:
            raise MalformedExpr("empty population tag")

    @property
    def names(self) -> frozenset[str]:
        return frozenset(v.name for v in self.outcome + self.given + self.do)

    def replace(self, **kw) -> "Term":
        d = dict(outcome=self.outcome, given=self.given, do=self.do, pop=self.pop)
        d.update(kw)
        return Term(**d)


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Value:
    """Numeric value of a variable; appears when expectations are expanded."""

    var: str


@dataclass(frozen=True)
class Sum:
    over: tuple[str, ...]
    body: "Expr"

    def __post_init__(self):
        object.__setattr__(self, "over", tuple(self.over))


@dataclass(frozen=True)
class Product:
    factors: tuple["Expr", ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))


@dataclass(frozen=True)
class Quotient:
    num: "Expr"
    den: "Expr"


@dataclass(frozen=True)
class Difference:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Expectation:
    """E over ``var`` of a distribution expression: Σ_var value(var) · of."""

    var: str
    of: "Expr"


Expr = Union[Term, Const, Value, Sum, Product, Quotient, Difference, Expectation]
ONE = Const(1.0)


def P(*outcome, given=(), do=(), pop: str = "src") -> Term:
    """Shorthand: ``P("Y", given="Z", do="X=1")``."""
    if len(outcome) == 1 and not isinstance(outcome[0], (str, Var)):
        outcome = tuple(outcome[0])
    return Term(_vars(outcome), _vars(given), _vars(do), pop)


def E(var: str, *, given=(), do=(), pop: str = "src") -> Expectation:
    return Expectation(var, P(var, given=given, do=do, pop=pop))


# -- traversal -------------------------------------------------------------


def children(e: Expr) -> tuple[Expr, ...]:
    if isinstance(e, Sum):
        return (e.body,)
    if isinstance(e, Product):
        return e.factors
    if isinstance(e, Quotient):
        return (e.num, e.den)
    if isinstance(e, Difference):
        return (e.left, e.right)
    if isinstance(e, Expectation):
        return (e.of,)
    return ()


def rebuild(e: Expr, kids: Sequence[Expr]) -> Expr:
    if isinstance(e, Sum):
        return Sum(e.over, kids[0])
    if isinstance(e, Product):
        return Product(tuple(kids))
    if isinstance(e, Quotient):
        return Quotient(kids[0], kids[1])
    if isinstance(e, Difference):
        return Difference(kids[0], kids[1])
    if isinstance(e, Expectation):
        return Expectation(e.var, kids[0])
    return e


def walk_terms(e: Expr, path: tuple[int, ...] = (), scope: frozenset[str] = frozenset()) -> Iterator[tuple[tuple[int, ...], Term, frozenset[str]]]:
    """Yield (path, term, names bound by enclosing sums/expectations) depth first."""
    if isinstance(e, Term):
        yield path, e, scope
        return
    inner = scope
    if isinstance(e, Sum):
        inner = scope | set(e.over)
    elif isinstance(e, Expectation):
        inner = scope | {e.var}
    for i, k in enumerate(children(e)):
        yield from walk_terms(k, path + (i,), inner)


def walk(e: Expr, path: tuple[int, ...] = ()) -> Iterator[tuple[tuple[int, ...], Expr]]:
    yield path, e
    for i, k in enumerate(children(e)):
        yield from walk(k, path + (i,))


def get_at(e: Expr, path: Sequence[int]) -> Expr:
    for i in path:
        e = children(e)[i]
    return e


def replace_at(e: Expr, path: Sequence[int], new: Expr) -> Expr:
    if not path:
        return new
    kids = list(children(e))
    kids[path[0]] = replace_at(kids[path[0]], path[1:], new)
    return rebuild(e, kids)


def terms(e: Expr) -> list[Term]:
    return [t for _, t, _ in walk_terms(e)]


def free_variables(e: Expr) -> frozenset[str]:
    """Variables occurring unpinned and not bound by an enclosing sum or expectation."""
    if isinstance(e, Term):
        return frozenset(v.name for v in e.outcome + e.given + e.do if not v.bound)
    if isinstance(e, Value):
        return frozenset({e.var})
    if isinstance(e, Const):
        return frozenset()
    if isinstance(e, Sum):
        return free_variables(e.body) - set(e.over)
    if isinstance(e, Expectation):
        return free_variables(e.of) - {e.var}
    out: frozenset[str] = frozenset()
    for k in children(e):
        out |= free_variables(k)
    return out


def mentioned(e: Expr) -> frozenset[str]:
    """Every variable name appearing anywhere, bound or not."""
    out = set()
    for _, node in walk(e):
        if isinstance(node, Term):
            out |= node.names
        elif isinstance(node, Sum):
            out |= set(node.over)
        elif isinstance(node, (Expectation, Value)):
            out.add(node.var)
    return frozenset(out)


def is_do_free(e: Expr) -> bool:
    return all(not t.do for t in terms(e))


def populations(e: Expr) -> frozenset[str]:
    return frozenset(t.pop for t in terms(e))


def validate(e: Expr, _bound: frozenset[str] = frozenset()) -> None:
    """Raise MalformedExpr when a structural invariant is violated."""
    if isinstance(e, Sum):
        if not e.over:
            raise MalformedExpr("sum over nothing")
        missing = set(e.over) - free_variables(e.body)
        if missing:
            raise MalformedExpr(f"summation variables {sorted(missing)} do not occur free in body")
        validate(e.body, _bound | set(e.over))
        return
    if isinstance(e, Term):
        clash = {v.name for v in e.outcome + e.given + e.do if v.bound} & _bound
        if clash:
            raise MalformedExpr(f"variables {sorted(clash)} are both summed and pinned")
        return
    if isinstance(e, Expectation):
        if e.var not in free_variables(e.of):
            raise MalformedExpr(f"expectation variable {e.var} not free in its body")
        validate(e.of, _bound | {e.var})
        return
    if isinstance(e, Product) and not e.factors:
        raise MalformedExpr("empty product")
    for k in children(e):
        validate(k, _bound)


def substitute(e: Expr, values: dict[str, int]) -> Expr:
    """Pin free occurrences of the given variables; bound occurrences are untouched."""
    if not values:
        return e
    if isinstance(e, Term):
        def pin(vs):
            return tuple(Var(v.name, values[v.name]) if (not v.bound and v.name in values) else v for v in vs)
        return e.replace(outcome=pin(e.outcome), given=pin(e.given), do=pin(e.do))
    if isinstance(e, Value):
        return Const(float(values[e.var])) if e.var in values else e
    if isinstance(e, Sum):
        inner = {k: v for k, v in values.items() if k not in e.over}
        return Sum(e.over, substitute(e.body, inner))
    if isinstance(e, Expectation):
        inner = {k: v for k, v in values.items() if k != e.var}
        return Expectation(e.var, substitute(e.of, inner))
    return rebuild(e, [substitute(k, values) for k in children(e)])


def expectation(var: str, e: Expr) -> Expr:
    """Build E_var[e], pushing the expectation through sums and var-free factors."""
    if isinstance(e, Sum) and var not in e.over:
        return Sum(e.over, expectation(var, e.body))
    if isinstance(e, Product):
        dep = [f for f in e.factors if var in free_variables(f)]
        rest = [f for f in e.factors if var not in free_variables(f)]
        if len(dep) == 1 and rest:
            return Product(tuple(rest) + (expectation(var, dep[0]),))
    return Expectation(var, e)


def expand_expectations(e: Expr) -> Expr:
    """Replace every E_var[f] by Σ_var value(var) · f."""
    if isinstance(e, Expectation):
        return Sum((e.var,), Product((Value(e.var), expand_expectations(e.of))))
    return rebuild(e, [expand_expectations(k) for k in children(e)])


# -- normalization ---------------------------------------------------------


def _key(order: Sequence[str] | None):
    idx = {n: i for i, n in enumerate(order or ())}
    big = len(idx)
    return lambda name: (idx.get(name, big), name)


def normalize(e: Expr, order: Sequence[str] | None = None) -> Expr:
    """Canonical form: sorted variable sets, merged sums, flattened sorted products.

    ``order`` is the canonical node order used for sorting; names outside it
    (and everything when it is omitted) sort alphabetically after it.
    """
    return _norm(e, _key(order))


def _norm(e: Expr, key) -> Expr:
    if isinstance(e, Term):
        vk = lambda v: key(v.name)
        return e.replace(outcome=tuple(sorted(e.outcome, key=vk)),
                         given=tuple(sorted(e.given, key=vk)),
                         do=tuple(sorted(e.do, key=vk)))
    if isinstance(e, (Const, Value)):
        return e
    if isinstance(e, Expectation):
        return Expectation(e.var, _norm(e.of, key))
    if isinstance(e, Difference):
        return Difference(_norm(e.left, key), _norm(e.right, key))
    if isinstance(e, Quotient):
        num, den = _norm(e.num, key), _norm(e.den, key)
        if den == ONE:
            return num
        return Quotient(num, den)
    if isinstance(e, Product):
        return _norm_product([_norm(f, key) for f in e.factors], key)
    if isinstance(e, Sum):
        return _norm_sum(set(e.over), _norm(e.body, key), key)
    raise MalformedExpr(f"unknown node {e!r}")


def _norm_product(factors: list[Expr], key) -> Expr:
    flat: list[Expr] = []
    coef = 1.0
    for f in factors:
        for g in (f.factors if isinstance(f, Product) else (f,)):
            if isinstance(g, Const):
                coef *= g.value
            else:
                flat.append(g)
    if coef != 1.0:
        flat.append(Const(coef))
    if not flat:
        return ONE
    if len(flat) == 1:
        return flat[0]
    flat.sort(key=lambda f: (not isinstance(f, Term), canonical_json(f)))
    return Product(tuple(flat))


def _norm_sum(over: set[str], body: Expr, key) -> Expr:
    while True:
        if isinstance(body, Sum):
            over = over | set(body.over)
            body = body.body
            continue
        if isinstance(body, Product):
            # lift inner sums whose variables are not captured by siblings or the outer sum
            lifted = None
            for i, f in enumerate(body.factors):
                if not isinstance(f, Sum) or set(f.over) & over:
                    continue
                others = body.factors[:i] + body.factors[i + 1:]
                if any(set(f.over) & free_variables(g) for g in others):
                    continue
                lifted = (i, f)
                break
            if lifted is not None:
                i, f = lifted
                over = over | set(f.over)
                body = _norm_product(list(body.factors[:i]) + [f.body] + list(body.factors[i + 1:]), key)
                continue
        break
    fv = free_variables(body)
    over = {v for v in over if v in fv}
    if not over:
        return body
    if isinstance(body, Product):
        dep = [f for f in body.factors if free_variables(f) & over]
        rest = [f for f in body.factors if not (free_variables(f) & over)]
        if rest:
            inner = _norm_sum(over, _norm_product(dep, key), key)
            return _norm_product(rest + [inner], key)
    if isinstance(body, Term):
        outs = {v.name for v in body.outcome}
        if (all(not v.bound for v in body.outcome) and outs == over
                and not (over & {v.name for v in body.given + body.do})):
            return ONE
    return Sum(tuple(sorted(over, key=key)), body)


def equivalent(a: Expr, b: Expr) -> bool:
    """Syntactic equality after normalization (not semantic equality)."""
    return canonical_json(normalize(a)) == canonical_json(normalize(b))


# -- structured form -------------------------------------------------------


def _vlist(vs):
    return [[v.name, v.value] for v in vs]


def to_structured(e: Expr) -> dict:
    if isinstance(e, Term):
        return {"t": "P", "pop": e.pop, "out": _vlist(e.outcome), "given": _vlist(e.given), "do": _vlist(e.do)}
    if isinstance(e, Const):
        return {"t": "const", "value": float(e.value)}
    if isinstance(e, Value):
        return {"t": "val", "var": e.var}
    if isinstance(e, Sum):
        return {"t": "sum", "over": list(e.over), "body": to_structured(e.body)}
    if isinstance(e, Product):
        return {"t": "prod", "factors": [to_structured(f) for f in e.factors]}
    if isinstance(e, Quotient):
        return {"t": "div", "num": to_structured(e.num), "den": to_structured(e.den)}
    if isinstance(e, Difference):
        return {"t": "sub", "left": to_structured(e.left), "right": to_structured(e.right)}
    if isinstance(e, Expectation):
        return {"t": "E", "var": e.var, "of": to_structured(e.of)}
    raise MalformedExpr(f"unknown node {e!r}")


def from_structured(d: dict) -> Expr:
    try:
        t = d["t"]
        if t == "P":
            mk = lambda vs: tuple(Var(n, None if v is None else int(v)) for n, v in vs)
            return Term(mk(d["out"]), mk(d["given"]), mk(d["do"]), d["pop"])
        if t == "const":
            return Const(float(d["value"]))
        if t == "val":
            return Value(d["var"])
        if t == "sum":
            return Sum(tuple(d["over"]), from_structured(d["body"]))
        if t == "prod":
            return Product(tuple(from_structured(f) for f in d["factors"]))
        if t == "div":
            return Quotient(from_structured(d["num"]), from_structured(d["den"]))
        if t == "sub":
            return Difference(from_structured(d["left"]), from_structured(d["right"]))
        if t == "E":
            return Expectation(d["var"], from_structured(d["of"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedExpr(f"bad structured expression: {exc}") from exc
    raise MalformedExpr(f"unknown node tag {d.get('t')!r}")


def canonical_json(e: Expr) -> str:
    return json.dumps(to_structured(e), sort_keys=True, separators=(",", ":"))


def parse_structured(text: str) -> Expr:
    return from_structured(json.loads(text))


# -- rendering -------------------------------------------------------------


def _pop_prefix(letter: str, pop: str, latex: bool) -> str:
    if pop == "src":
        return letter
    if pop == "tgt":
        return letter + ("^{*}" if latex else "*")
    return f"{letter}_{{{pop}}}" if latex else f"{letter}_{pop}"


class _Renderer:
    def __init__(self, latex: bool):
        self.latex = latex

    def var(self, v: Var, names: dict[str, str]) -> str:
        if v.bound:
            return f"{v.name}={v.value}"
        return names.get(v.name, v.name.lower())

    def cond(self, t: Term, names) -> str:
        parts = []
        if t.do:
            do = ", ".join(self.var(v, names) for v in t.do)
            parts.append(f"\\mathrm{{do}}({do})" if self.latex else f"do({do})")
        parts += [self.var(v, names) for v in t.given]
        return ", ".join(parts)

    def term(self, t: Term, names, letter="P", outcome=None) -> str:
        out = outcome if outcome is not None else ", ".join(self.var(v, names) for v in t.outcome)
        c = self.cond(t, names)
        mid = " \\mid " if self.latex else " | "
        return f"{_pop_prefix(letter, t.pop, self.latex)}({out}{mid + c if c else ''})"

    def sigma(self, over, names) -> str:
        vs = [names[v] for v in over]
        if self.latex:
            return "\\sum_{" + ", ".join(vs) + "}"
        return "Σ_" + vs[0] if len(vs) == 1 else "Σ_{" + ",".join(vs) + "}"

    def render(self, e: Expr, names: dict[str, str], active: frozenset[str]) -> str:
        if isinstance(e, Term):
            return self.term(e, names)
        if isinstance(e, Const):
            v = e.value
            return str(int(v)) if float(v).is_integer() else repr(v)
        if isinstance(e, Value):
            return names.get(e.var, e.var.lower())
        if isinstance(e, Expectation):
            inner_names = dict(names)
            inner_names.pop(e.var, None)
            if isinstance(e.of, Term) and [v.name for v in e.of.outcome] == [e.var]:
                return self.term(e.of, inner_names, letter="E", outcome=e.var)
            body = self.render(e.of, inner_names, active | {e.var})
            return f"E_{e.var.lower()}[{body}]"
        if isinstance(e, Sum):
            inner = dict(names)
            for v in e.over:
                base = v.lower()
                inner[v] = base + "'" if v in active else base
            body = self.render(e.body, inner, active | set(e.over))
            if isinstance(e.body, Difference):
                body = f"[{body}]"
            return f"{self.sigma(e.over, inner)} {body}"
        if isinstance(e, Product):
            out = []
            for i, f in enumerate(e.factors):
                s = self.render(f, names, active)
                last = i == len(e.factors) - 1
                if isinstance(f, Difference) or (isinstance(f, Sum) and not last) or isinstance(f, Quotient):
                    s = f"[{s}]"
                out.append(s)
            return (" \\cdot " if self.latex else " ").join(out)
        if isinstance(e, Quotient):
            n = self.render(e.num, names, active)
            d = self.render(e.den, names, active)
            if self.latex:
                return f"\\frac{{{n}}}{{{d}}}"
            return f"({n}) / ({d})"
        if isinstance(e, Difference):
            l = self.render(e.left, names, active)
            r = self.render(e.right, names, active)
            if isinstance(e.right, Difference):
                r = f"[{r}]"
            return f"{l} - {r}"
        raise MalformedExpr(f"unknown node {e!r}")


def render(e: Expr, fmt: str = "text") -> str:
    """Deterministic rendering as ``text``, ``latex`` or ``structured`` (JSON)."""
    if fmt == "structured":
        return canonical_json(e)
    if fmt not in ("text", "latex"):
        raise ValueError(f"unknown format {fmt!r}")
    return _Renderer(fmt == "latex").render(e, {}, free_variables(e))


@dataclass(frozen=True)
class Estimand:
    expr: Expr
    do_free: bool = field(init=False)
    populations_used: frozenset[str] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "do_free", is_do_free(self.expr))
        object.__setattr__(self, "populations_used", populations(self.expr))

    def render(self, fmt: str = "text") -> str:
        return render(self.expr, fmt)
