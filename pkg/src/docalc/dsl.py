"""Text formats: graph declarations, study corpora, and the expression mini-language."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from . import graph as g
from .expr import (Const, Difference, Expectation, Expr, MalformedExpr, Product, Quotient, Sum,
                   Term, Var, parse_structured)


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line, self.col = line, col
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {col}" if col is not None else "") + ": "
        super().__init__(where + message)


NAME = r"[A-Za-z_][A-Za-z0-9_]*"
_EDGE = re.compile(r"\s*(->|<->|~>)\s*")


@dataclass
class _Stmt:
    text: str
    line: int
    col: int


def _statements(text: str) -> list[_Stmt]:
    out = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        pos = 0
        for part in body.split(";"):
            stripped = part.strip()
            if stripped:
                out.append(_Stmt(stripped, ln, pos + part.index(stripped[0]) + 1))
            pos += len(part) + 1
    return out


def _names(s: str, st: _Stmt, allow_empty=False) -> list[str]:
    items = [x.strip() for x in s.split(",")]
    if items == [""] and allow_empty:
        return []
    for x in items:
        if not re.fullmatch(NAME, x):
            raise ParseError(f"bad name {x!r}", st.line, st.col)
    return items


@dataclass
class GraphDecl:
    nodes: list[str]
    latent: list[str]
    directed: list[tuple[str, str, int]]
    bidirected: list[tuple[str, str, int]]
    selection: list[tuple[str, str, int]]
    node_lines: dict[str, int]


def _parse_decl(stmts: Sequence[_Stmt]) -> GraphDecl:
    d = GraphDecl([], [], [], [], [], {})
    for st in stmts:
        head, sep, rest = st.text.partition(":")
        key = head.strip().lower()
        if sep and key in ("nodes", "latent"):
            for n in _names(rest, st, allow_empty=True):
                if n in d.node_lines:
                    raise g.DuplicateNode(f"node {n} declared twice", st.line)
                d.node_lines[n] = st.line
                d.nodes.append(n)
                if key == "latent":
                    d.latent.append(n)
            continue
        parts = _EDGE.split(st.text)
        if len(parts) < 3:
            raise ParseError(f"expected a declaration or an edge, got {st.text!r}", st.line, st.col)
        for i in range(0, len(parts), 2):
            if not re.fullmatch(NAME, parts[i].strip()):
                col = st.col + len("".join(parts[:i]))
                what = "dangling arrow" if not parts[i].strip() else f"bad name {parts[i].strip()!r}"
                raise ParseError(what, st.line, col)
        for i in range(1, len(parts) - 1, 2):
            a, op, b = parts[i - 1].strip(), parts[i], parts[i + 1].strip()
            if op == "->":
                d.directed.append((a, b, st.line))
            elif op == "<->":
                d.bidirected.append((a, b, st.line))
            else:
                d.selection.append((a, b, st.line))
    return d


def build_diagram(decl: GraphDecl) -> g.CausalDiagram:
    known = set(decl.nodes)
    for a, b, ln in decl.directed + decl.bidirected:
        for v in (a, b):
            if v not in known:
                raise g.UnknownNodeInEdge(f"edge uses undeclared node {v}", ln)
        if a == b:
            raise g.MalformedDecl(f"self-loop on {a}", ln)
    for a, b, ln in decl.bidirected:
        if a in decl.latent or b in decl.latent:
            raise g.MalformedDecl("bidirected edges join observed nodes only", ln)
    seen_edges: dict = {}
    for a, b, ln in decl.directed:
        if (a, b) in seen_edges:
            raise g.MalformedDecl(f"duplicate edge {a} -> {b}", ln)
        seen_edges[(a, b)] = ln
    for a, b, ln in decl.bidirected:
        k = frozenset((a, b))
        if k in seen_edges:
            raise g.MalformedDecl(f"duplicate edge {a} <-> {b}", ln)
        seen_edges[k] = ln
    cyc = g._find_cycle(tuple(decl.nodes), frozenset((a, b) for a, b, _ in decl.directed))
    if cyc:
        lines = [seen_edges[(cyc[i], cyc[i + 1])] for i in range(len(cyc) - 1) if (cyc[i], cyc[i + 1]) in seen_edges]
        raise g.CycleError("directed cycle " + " -> ".join(cyc), max(lines) if lines else None)
    return g.CausalDiagram(tuple(decl.nodes), frozenset((a, b) for a, b, _ in decl.directed),
                           frozenset(frozenset((a, b)) for a, b, _ in decl.bidirected), frozenset(decl.latent))


def _selection(base: g.CausalDiagram, sel: list[tuple[str, str, int]]):
    from .transport import SelectionDiagram

    edges = []
    owners: dict[str, str] = {}
    for s, v, ln in sel:
        if v not in base.index:
            raise g.UnknownNodeInEdge(f"selection edge targets undeclared node {v}", ln)
        if s in base.index:
            raise g.MalformedDecl(f"selection node {s} collides with a variable", ln)
        if s in owners and owners[s] != v:
            raise g.MalformedDecl(f"selection node {s} points at more than one variable", ln)
        owners[s] = v
        edges.append((s, v))
    return SelectionDiagram(base, frozenset(edges))


def parse_graph_dsl(text: str):
    """A CausalDiagram, or a SelectionDiagram when the text has ``~>`` edges."""
    decl = _parse_decl(_statements(text))
    base = build_diagram(decl)
    if decl.selection:
        return _selection(base, decl.selection)
    return base


# -- study corpora -----------------------------------------------------------------

_STUDY = re.compile(r"study\s+(" + NAME + r")\s*\{(.*?)\}", re.S)


def parse_studies(text: str):
    """Shared base graph followed by ``study <label> { select: ...; regime: ...; measured: ... }`` blocks."""
    from .transport import StudyDescriptor, attach_selection

    stripped = "\n".join(line.split("#", 1)[0] for line in text.splitlines())
    blocks = []

    def cut(m):
        start_line = stripped.count("\n", 0, m.start()) + 1
        blocks.append((m.group(1), m.group(2), start_line))
        return "\n" * m.group(0).count("\n")

    rest = _STUDY.sub(cut, stripped)
    if "study" in re.findall(NAME, rest):
        ln = next(i for i, l in enumerate(rest.splitlines(), 1) if re.search(r"\bstudy\b", l))
        raise ParseError("malformed study block", ln)
    base = build_diagram(_parse_decl(_statements(rest)))
    studies = []
    labels = set()
    for label, body, ln in blocks:
        if label in labels:
            raise g.MalformedDecl(f"study {label} declared twice", ln)
        labels.add(label)
        fields = {}
        for part in re.split(r"[;\n]", body):
            part = part.strip()
            if not part:
                continue
            k, sep, v = part.partition(":")
            k = k.strip().lower()
            if not sep or k not in ("select", "regime", "measured"):
                raise ParseError(f"unknown study field {part!r}", ln)
            fields[k] = v.strip()
        st = _Stmt(body, ln, 1)
        select = _names(fields.get("select", ""), st, allow_empty=True)
        regime_text = fields.get("regime", "observational")
        m = re.fullmatch(r"randomized\s*\((.*)\)", regime_text)
        if m:
            regime = _names(m.group(1), st)
        elif regime_text == "observational":
            regime = []
        else:
            raise ParseError(f"unknown regime {regime_text!r}", ln)
        measured = _names(fields["measured"], st) if "measured" in fields else list(base.observed)
        try:
            SD = attach_selection(base, select)
        except g.UnknownNode as exc:
            raise g.UnknownNode(str(exc), ln) from None
        studies.append(StudyDescriptor(label, SD, tuple(regime), frozenset(measured)))
    return base, studies


# -- expressions ---------------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(?P<num>\d+(?:\.\d*)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*'*)|(?P<sym>Σ|[()\[\]{}|,=*/\-]))")


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(s: str) -> list[_Tok]:
    out, i = [], 0
    while i < len(s):
        if s[i:].strip() == "":
            break
        m = _TOKEN.match(s, i)
        if not m or m.end() == i:
            raise ParseError(f"unexpected character {s[i:].lstrip()[:1]!r}", 1, i + 1)
        kind = m.lastgroup
        out.append(_Tok(kind, m.group(kind), m.start(kind)))
        i = m.end()
    out.append(_Tok("end", "", len(s)))
    return out


class _ExprParser:
    def __init__(self, text: str, names: Sequence[str] | None):
        self.toks = _tokenize(text)
        self.i = 0
        self.lookup = None
        if names is not None:
            self.lookup = {}
            for n in names:
                self.lookup.setdefault(n.lower(), n)
            self.exact = set(names)

    def peek(self, k=0) -> _Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def take(self, text=None, kind=None) -> _Tok:
        t = self.peek()
        if (text is not None and t.text != text) or (kind is not None and t.kind != kind):
            want = text or kind
            raise ParseError(f"expected {want!r}, found {t.text or 'end of input'!r}", 1, t.pos + 1)
        self.i += 1
        return t

    def resolve(self, raw: str, pos: int) -> str:
        name = raw.rstrip("'")
        if self.lookup is None or name in self.exact:
            return name
        if name.lower() in self.lookup:
            return self.lookup[name.lower()]
        raise ParseError(f"unknown variable {name!r}", 1, pos + 1)

    # grammar
    def parse(self) -> Expr:
        e = self.additive()
        if self.peek().kind != "end":
            t = self.peek()
            raise ParseError(f"unexpected {t.text!r}", 1, t.pos + 1)
        return e

    def additive(self) -> Expr:
        e = self.multiplicative()
        while self.peek().text == "-":
            self.take("-")
            e = Difference(e, self.multiplicative())
        return e

    def _starts_factor(self) -> bool:
        t = self.peek()
        return t.kind in ("num", "name") or t.text in ("(", "[", "Σ")

    def multiplicative(self) -> Expr:
        factors = [self.unary()]
        while True:
            t = self.peek()
            if t.text == "*":
                self.take("*")
                factors.append(self.unary())
            elif t.text == "/":
                self.take("/")
                left = Product(tuple(factors)) if len(factors) > 1 else factors[0]
                factors = [Quotient(left, self.unary())]
            elif self._starts_factor():
                factors.append(self.unary())
            else:
                break
        return Product(tuple(factors)) if len(factors) > 1 else factors[0]

    def _sum_vars(self) -> list[str]:
        t = self.peek()
        if t.text == "{":
            self.take("{")
            vs = [self.resolve(self.take(kind="name").text, t.pos)]
            while self.peek().text == ",":
                self.take(",")
                vs.append(self.resolve(self.take(kind="name").text, t.pos))
            self.take("}")
            return vs
        n = self.take(kind="name")
        return [self.resolve(n.text, n.pos)]

    def unary(self) -> Expr:
        t = self.peek()
        if t.kind == "name" and t.text.lower() == "sum" and self.peek(1).text == "{":
            self.take()
            over = self._sum_vars()
            return Sum(tuple(over), self.multiplicative())
        if t.text == "Σ":
            self.take("Σ")
            nt = self.peek()
            if nt.kind == "name" and nt.text == "_" and self.peek(1).text == "{":
                self.take()
                over = self._sum_vars()
            elif nt.kind == "name" and nt.text.startswith("_"):
                self.take()
                over = [self.resolve(nt.text[1:], nt.pos)]
            else:
                raise ParseError("expected _var or _{vars} after Σ", 1, nt.pos + 1)
            return Sum(tuple(over), self.multiplicative())
        return self.primary()

    def primary(self) -> Expr:
        t = self.peek()
        if t.kind == "num":
            self.take()
            return Const(float(t.text))
        if t.text in ("(", "["):
            close = ")" if t.text == "(" else "]"
            self.take()
            e = self.additive()
            self.take(close)
            return e
        if t.kind != "name":
            raise ParseError(f"unexpected {t.text or 'end of input'!r}", 1, t.pos + 1)
        word = t.text
        if word.lower() == "prod" and self.peek(1).text == "(":
            self.take()
            self.take("(")
            fs = [self.additive()]
            while self.peek().text == ",":
                self.take(",")
                fs.append(self.additive())
            self.take(")")
            return Product(tuple(fs))
        if word == "P" or word.startswith("P_"):
            self.take()
            return self.term(self.pop_suffix(word))
        if word == "E" or word.startswith("E_"):
            self.take()
            if word.startswith("E_") and self.peek().text == "[":
                var = self.resolve(word[2:], t.pos)
                self.take("[")
                body = self.additive()
                self.take("]")
                return Expectation(var, body)
            pop = self.pop_suffix(word)
            term = self.term(pop, expectation=True)
            return Expectation(term.outcome[0].name, term)
        raise ParseError(f"unexpected name {word!r}", 1, t.pos + 1)

    def pop_suffix(self, word: str) -> str:
        if word[1:].startswith("_"):
            return word[2:]
        if self.peek().text == "*":
            self.take("*")
            return "tgt"
        if self.peek().text == "[":
            self.take("[")
            pop = self.take(kind="name").text
            self.take("]")
            return pop
        return "src"

    def var(self) -> Var:
        n = self.take(kind="name")
        name = self.resolve(n.text, n.pos)
        if self.peek().text == "=":
            self.take("=")
            neg = False
            if self.peek().text == "-":
                self.take("-")
                neg = True
            v = self.take(kind="num")
            val = int(float(v.text))
            return Var(name, -val if neg else val)
        return Var(name)

    def term(self, pop: str, expectation: bool = False) -> Term:
        self.take("(")
        outcome = [self.var()]
        while self.peek().text == ",":
            self.take(",")
            outcome.append(self.var())
        given, do = [], []
        if self.peek().text == "|":
            self.take("|")
            while True:
                t = self.peek()
                if t.kind == "name" and t.text == "do" and self.peek(1).text == "(":
                    self.take()
                    self.take("(")
                    do.append(self.var())
                    while self.peek().text == ",":
                        self.take(",")
                        do.append(self.var())
                    self.take(")")
                else:
                    given.append(self.var())
                if self.peek().text != ",":
                    break
                self.take(",")
        self.take(")")
        if expectation and len(outcome) != 1:
            raise ParseError("an expectation needs exactly one outcome variable", 1, self.peek().pos + 1)
        try:
            return Term(tuple(outcome), tuple(given), tuple(do), pop)
        except MalformedExpr as exc:
            raise ParseError(str(exc), 1, self.peek().pos + 1) from None


def parse_expr(text: str, names: Sequence[str] | None = None) -> Expr:
    """Parse the expression mini-language, or a structured (JSON) expression.

    With ``names``, variable spellings are matched case-insensitively against them.
    """
    s = text.strip()
    if s.startswith("{"):
        return parse_structured(s)
    return _ExprParser(s, names).parse()
