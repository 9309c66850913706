"""Causal diagrams over named variables, mutilation operators and d-separation.

Diagrams are mixed graphs: directed edges, bidirected (latent confounder)
edges and optionally explicit latent nodes. All values are immutable and
hashable so they can key caches.
"""

from __future__ import annotations

import functools
import itertools
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Literal

TOKEN = re.compile(r"^[A-Za-z0-9_]+$")


class DiagramError(ValueError):
    """Base class for structural errors. ``line`` is set when raised by the parser."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CycleError(DiagramError):
    pass


class DuplicateNode(DiagramError):
    pass


class UnknownNodeInEdge(DiagramError):
    pass


class MalformedDecl(DiagramError):
    pass


class UnknownNode(DiagramError):
    pass


class OverlappingSets(DiagramError):
    pass


@dataclass(frozen=True)
class CausalDiagram:
    """Acyclic mixed graph. ``nodes`` order is the canonical order everywhere."""

    nodes: tuple[str, ...]
    directed: frozenset[tuple[str, str]] = frozenset()
    bidirected: frozenset[frozenset[str]] = frozenset()
    latent: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "directed", frozenset(tuple(e) for e in self.directed))
        object.__setattr__(self, "bidirected", frozenset(frozenset(e) for e in self.bidirected))
        object.__setattr__(self, "latent", frozenset(self.latent))
        seen = set()
        for n in self.nodes:
            if not TOKEN.match(n):
                raise MalformedDecl(f"bad node name {n!r}")
            if n in seen:
                raise DuplicateNode(f"duplicate node {n}")
            seen.add(n)
        for a, b in self.directed:
            for v in (a, b):
                if v not in seen:
                    raise UnknownNodeInEdge(f"edge {a} -> {b} uses unknown node {v}")
            if a == b:
                raise MalformedDecl(f"self-loop on {a}")
        for e in self.bidirected:
            if len(e) != 2:
                raise MalformedDecl(f"bidirected edge {sorted(e)} needs two distinct nodes")
            for v in e:
                if v not in seen:
                    raise UnknownNodeInEdge(f"edge {' <-> '.join(sorted(e))} uses unknown node {v}")
                if v in self.latent:
                    raise MalformedDecl(f"bidirected edge touches latent node {v}")
        if not self.latent <= seen:
            raise UnknownNode(f"unknown latent nodes {sorted(self.latent - seen)}")
        cycle = _find_cycle(self.nodes, self.directed)
        if cycle:
            raise CycleError("directed cycle " + " -> ".join(cycle))

    # -- structure -----------------------------------------------------

    @cached_property
    def index(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.nodes)}

    @cached_property
    def observed(self) -> tuple[str, ...]:
        return tuple(n for n in self.nodes if n not in self.latent)

    @cached_property
    def _pa(self) -> dict[str, tuple[str, ...]]:
        pa: dict[str, list[str]] = {n: [] for n in self.nodes}
        for a, b in self.directed:
            pa[b].append(a)
        return {n: self.sort(v) for n, v in pa.items()}

    @cached_property
    def _ch(self) -> dict[str, tuple[str, ...]]:
        ch: dict[str, list[str]] = {n: [] for n in self.nodes}
        for a, b in self.directed:
            ch[a].append(b)
        return {n: self.sort(v) for n, v in ch.items()}

    @cached_property
    def _sib(self) -> dict[str, tuple[str, ...]]:
        sib: dict[str, list[str]] = {n: [] for n in self.nodes}
        for e in self.bidirected:
            a, b = tuple(e)
            sib[a].append(b)
            sib[b].append(a)
        return {n: self.sort(v) for n, v in sib.items()}

    def parents(self, v: str) -> tuple[str, ...]:
        return self._pa[v]

    def children(self, v: str) -> tuple[str, ...]:
        return self._ch[v]

    def siblings(self, v: str) -> tuple[str, ...]:
        return self._sib[v]

    def sort(self, names: Iterable[str]) -> tuple[str, ...]:
        idx = self.index
        return tuple(sorted(names, key=lambda n: idx.get(n, len(idx))))

    @cached_property
    def topological_order(self) -> tuple[str, ...]:
        indeg = {n: len(self._pa[n]) for n in self.nodes}
        ready = [n for n in self.nodes if indeg[n] == 0]
        out = []
        while ready:
            ready.sort(key=self.index.__getitem__)
            n = ready.pop(0)
            out.append(n)
            for c in self._ch[n]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        return tuple(out)

    def check(self, names: Iterable[str]) -> frozenset[str]:
        s = frozenset(names)
        unknown = s - set(self.nodes)
        if unknown:
            raise UnknownNode(f"unknown nodes {sorted(unknown)}")
        return s

    def edges_text(self) -> list[str]:
        out = [f"{a} -> {b}" for a, b in sorted(self.directed, key=lambda e: (self.index[e[0]], self.index[e[1]]))]
        bi = sorted((self.sort(e) for e in self.bidirected), key=lambda e: (self.index[e[0]], self.index[e[1]]))
        out += [f"{a} <-> {b}" for a, b in bi]
        return out

    def to_dsl(self) -> str:
        """Graph DSL text that parses back to this diagram (latent nodes listed last)."""
        lines = [f"nodes: {', '.join(self.observed)}"]
        if self.latent:
            lines.append(f"latent: {', '.join(self.sort(self.latent))}")
        return "\n".join(lines + self.edges_text()) + "\n"

    def __repr__(self) -> str:
        lat = f"; latent: {', '.join(self.sort(self.latent))}" if self.latent else ""
        return f"CausalDiagram(nodes: {', '.join(self.nodes)}{lat}; {'; '.join(self.edges_text())})"


def _find_cycle(nodes, directed) -> list[str] | None:
    ch: dict[str, list[str]] = {n: [] for n in nodes}
    for a, b in directed:
        if a in ch:
            ch[a].append(b)
    color = dict.fromkeys(nodes, 0)
    stack_path: list[str] = []

    def visit(n):
        color[n] = 1
        stack_path.append(n)
        for c in sorted(ch[n]):
            if color.get(c) == 1:
                return stack_path[stack_path.index(c):] + [c]
            if color.get(c) == 0:
                found = visit(c)
                if found:
                    return found
        stack_path.pop()
        color[n] = 2
        return None

    for n in nodes:
        if color[n] == 0:
            found = visit(n)
            if found:
                return found
    return None


def _disjoint(*sets: frozenset[str]) -> None:
    for a, b in itertools.combinations(sets, 2):
        if a & b:
            raise OverlappingSets(f"sets overlap on {sorted(a & b)}")


# -- mutilation --------------------------------------------------------


def _fresh(prefix: str, taken: set[str]) -> str:
    k = 1
    while f"{prefix}{k}" in taken:
        k += 1
    name = f"{prefix}{k}"
    taken.add(name)
    return name


@functools.lru_cache(maxsize=4096)
def latent_canonicalize(D: CausalDiagram) -> CausalDiagram:
    """Replace every bidirected edge A <-> B by a fresh latent L with L -> A, L -> B."""
    if not D.bidirected:
        return D
    taken = set(D.nodes)
    nodes = list(D.nodes)
    directed = set(D.directed)
    latent = set(D.latent)
    pairs = sorted((D.sort(e) for e in D.bidirected), key=lambda e: (D.index[e[0]], D.index[e[1]]))
    for a, b in pairs:
        lat = _fresh("L", taken)
        nodes.append(lat)
        latent.add(lat)
        directed |= {(lat, a), (lat, b)}
    return CausalDiagram(tuple(nodes), frozenset(directed), frozenset(), frozenset(latent))


@functools.lru_cache(maxsize=65536)
def _cut_incoming(D: CausalDiagram, X: frozenset[str]) -> CausalDiagram:
    if not X:
        return D
    directed = frozenset(e for e in D.directed if e[1] not in X)
    bidirected = frozenset(e for e in D.bidirected if not (e & X))
    return CausalDiagram(D.nodes, directed, bidirected, D.latent)


@functools.lru_cache(maxsize=65536)
def _cut_outgoing(D: CausalDiagram, X: frozenset[str]) -> CausalDiagram:
    if not X:
        return D
    directed = frozenset(e for e in D.directed if e[0] not in X)
    return CausalDiagram(D.nodes, directed, D.bidirected, D.latent)


def cut_incoming(D: CausalDiagram, X: Iterable[str]) -> CausalDiagram:
    """G with every arrow into X removed, including bidirected edges touching X."""
    return _cut_incoming(D, D.check(X))


def cut_outgoing(D: CausalDiagram, X: Iterable[str]) -> CausalDiagram:
    """G with every directed arrow out of X removed."""
    return _cut_outgoing(D, D.check(X))


def relatives(
    D: CausalDiagram,
    S: Iterable[str],
    direction: Literal["ancestors", "descendants"] = "ancestors",
    inclusive: bool = True,
) -> frozenset[str]:
    S = D.check(S)
    return _relatives(D, S, direction, inclusive)


@functools.lru_cache(maxsize=65536)
def _relatives(D, S, direction, inclusive):
    step = D.parents if direction == "ancestors" else D.children
    seen = set(S)
    frontier = list(S)
    while frontier:
        v = frontier.pop()
        for w in step(v):
            if w not in seen:
                seen.add(w)
                frontier.append(w)
    if not inclusive:
        return frozenset(seen - S)
    return frozenset(seen)


def ancestors(D: CausalDiagram, S: Iterable[str]) -> frozenset[str]:
    return relatives(D, S, "ancestors", True)


def descendants(D: CausalDiagram, S: Iterable[str]) -> frozenset[str]:
    return relatives(D, S, "descendants", True)


def induced_subgraph(D: CausalDiagram, keep: Iterable[str]) -> CausalDiagram:
    keep = D.check(keep)
    return CausalDiagram(
        tuple(n for n in D.nodes if n in keep),
        frozenset(e for e in D.directed if e[0] in keep and e[1] in keep),
        frozenset(e for e in D.bidirected if e <= keep),
        D.latent & keep,
    )


@functools.lru_cache(maxsize=4096)
def latent_projection(D: CausalDiagram) -> CausalDiagram:
    """Project explicit latent nodes out, leaving an ADMG over the observed nodes."""
    if not D.latent:
        return D
    obs = set(D.observed)
    directed = {e for e in D.directed if e[0] in obs and e[1] in obs}
    bidirected = set(D.bidirected)

    def latent_reach(start):
        # observed nodes reachable from start through latent-only directed paths
        out, stack, seen = set(), list(D.children(start)), set()
        while stack:
            v = stack.pop()
            if v in seen:
                continue
            seen.add(v)
            if v in obs:
                out.add(v)
            else:
                stack.extend(D.children(v))
        return out

    for v in D.nodes:
        reach = latent_reach(v)
        if v in obs:
            directed |= {(v, w) for w in reach if w != v}
        else:
            bidirected |= {frozenset((a, b)) for a, b in itertools.combinations(sorted(reach), 2)}
    return CausalDiagram(D.observed, frozenset(directed), frozenset(bidirected))


def c_components(D: CausalDiagram) -> list[frozenset[str]]:
    """Partition of observed nodes into bidirected-connected components, in canonical order."""
    P = latent_projection(D)
    parent = {n: n for n in P.nodes}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for e in P.bidirected:
        a, b = tuple(e)
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb, key=P.index.__getitem__)] = min(ra, rb, key=P.index.__getitem__)
    groups: dict[str, set[str]] = {}
    for n in P.nodes:
        groups.setdefault(find(n), set()).add(n)
    return [frozenset(groups[r]) for r in sorted(groups, key=P.index.__getitem__)]


# -- d-separation --------------------------------------------------------


@dataclass(frozen=True)
class SeparationCertificate:
    """Outcome of a d-separation query on a (possibly mutilated) diagram.

    ``witness`` alternates node names and edge glyphs (``->``, ``<-``, ``<->``)
    and is present exactly when the verdict is ``connected``.
    """

    A: tuple[str, ...]
    B: tuple[str, ...]
    C: tuple[str, ...]
    graph_tag: str
    verdict: Literal["separated", "connected"]
    witness: tuple[str, ...] | None
    graph: CausalDiagram

    @property
    def separated(self) -> bool:
        return self.verdict == "separated"

    def describe(self) -> str:
        q = f"({','.join(self.A)} _||_ {','.join(self.B)} | {','.join(self.C)})_{self.graph_tag}"
        if self.separated:
            return q + ": separated"
        return q + ": connected via " + " ".join(self.witness or ())

    def recheck(self) -> bool:
        """Re-run the query; for a connected verdict also re-verify the witness path."""
        again = d_separated(self.graph, self.A, self.B, self.C, self.graph_tag)
        if again.verdict != self.verdict:
            return False
        if self.witness is not None:
            return path_is_active(self.graph, self.witness, set(self.C))
        return True


def _incident(D: CausalDiagram, v: str):
    """(neighbor, glyph-from-v, head_at_v, head_at_neighbor) in canonical order."""
    out = []
    for w in D.children(v):
        out.append((w, "->", False, True))
    for w in D.parents(v):
        out.append((w, "<-", True, False))
    for w in D.siblings(v):
        out.append((w, "<->", True, True))
    out.sort(key=lambda t: (D.index[t[0]], t[1]))
    return out


def path_is_active(D: CausalDiagram, path: Iterable[str], C: Iterable[str]) -> bool:
    """Check an alternating node/glyph path: edges exist and every interior node passes."""
    path = list(path)
    C = set(C)
    nodes = path[0::2]
    glyphs = path[1::2]
    if len(nodes) != len(glyphs) + 1 or len(set(nodes)) != len(nodes):
        return False
    for a, g, b in zip(nodes, glyphs, nodes[1:]):
        ok = (
            (g == "->" and (a, b) in D.directed)
            or (g == "<-" and (b, a) in D.directed)
            or (g == "<->" and frozenset((a, b)) in D.bidirected)
        )
        if not ok:
            return False
    if nodes[0] in C or nodes[-1] in C:
        return False
    anc_c = ancestors(D, C & set(D.nodes)) if C else frozenset()
    for i in range(1, len(nodes) - 1):
        head_in = glyphs[i - 1] in ("->", "<->")
        head_out = glyphs[i] in ("<-", "<->")
        v = nodes[i]
        if head_in and head_out:
            if v not in anc_c:
                return False
        elif v in C:
            return False
    return True


def _reachable(D: CausalDiagram, A: frozenset[str], B: frozenset[str], C: frozenset[str]) -> bool:
    anc_c = ancestors(D, C) if C else frozenset()
    seen = set()
    stack = []
    for a in A:
        for w, _, _, head_w in _incident(D, a):
            stack.append((w, head_w))
    while stack:
        v, head_in = stack.pop()
        if (v, head_in) in seen:
            continue
        seen.add((v, head_in))
        if v in B:
            return True
        if v in A:
            continue
        for w, _, head_v, head_w in _incident(D, v):
            if head_in and head_v:
                if v not in anc_c:
                    continue
            elif v in C:
                continue
            stack.append((w, head_w))
    return False


def _first_active_path(D, A, B, C) -> tuple[str, ...] | None:
    anc_c = ancestors(D, C) if C else frozenset()

    def dfs(path_nodes, glyphs, head_in):
        v = path_nodes[-1]
        for w, g, head_v, head_w in _incident(D, v):
            if w in path_nodes:
                continue
            if len(path_nodes) > 1:
                if head_in and head_v:
                    if v not in anc_c:
                        continue
                elif v in C:
                    continue
            if w in A:
                continue
            if w in B:
                out = [path_nodes[0]]
                for n, gl in zip(path_nodes[1:] + [w], glyphs + [g]):
                    out += [gl, n]
                return tuple(out)
            found = dfs(path_nodes + [w], glyphs + [g], head_w)
            if found:
                return found
        return None

    for a in D.sort(A):
        found = dfs([a], [], False)
        if found:
            return found
    return None


def d_separated(
    D: CausalDiagram,
    A: Iterable[str],
    B: Iterable[str],
    C: Iterable[str] = (),
    graph_tag: str = "G",
) -> SeparationCertificate:
    """Decide (A _||_ B | C) in D. Connected verdicts carry the first active path."""
    A, B, C = D.check(A), D.check(B), D.check(C)
    _disjoint(A, B, C)
    return _d_separated(D, A, B, C, graph_tag)


@functools.lru_cache(maxsize=262144)
def _d_separated(D, A, B, C, graph_tag):
    connected = bool(A and B) and _reachable(D, A, B, C)
    witness = _first_active_path(D, A, B, C) if connected else None
    return SeparationCertificate(
        D.sort(A), D.sort(B), D.sort(C), graph_tag,
        "connected" if connected else "separated", witness, D,
    )


def rule3_zw(D: CausalDiagram, X: Iterable[str], Z: Iterable[str], W: Iterable[str]) -> frozenset[str]:
    """Z-nodes that are not ancestors of any W-node once arrows into X are cut."""
    X, Z, W = D.check(X), D.check(Z), D.check(W)
    _disjoint(X, Z, W)
    anc_w = ancestors(_cut_incoming(D, X), W) if W else frozenset()
    return frozenset(z for z in Z if z not in anc_w)
