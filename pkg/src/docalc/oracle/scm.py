"""Fully specified discrete structural causal models and exact evaluation."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np

from .. import graph as g
from ..expr import (Const, Difference, Expectation, Expr, MalformedExpr, Product, Quotient,
                    Sum, Term, Value, free_variables)
from . import _kernels


class UnboundPopulation(KeyError):
    pass


class ZeroDenominator(ZeroDivisionError):
    pass


class NonNumericOutcome(TypeError):
    pass


@dataclass(frozen=True)
class Dist:
    """Table over joint assignments of ``vars`` (axes in that order)."""

    vars: tuple[str, ...]
    table: np.ndarray

    def __getitem__(self, assignment: Mapping[str, int]) -> float:
        return float(self.table[tuple(assignment[v] for v in self.vars)])

    def items(self):
        for idx in itertools.product(*(range(k) for k in self.table.shape)):
            yield dict(zip(self.vars, idx)), float(self.table[idx])


@dataclass(eq=False)
class DiscreteSCM:
    """⟨U, V, F, P(u)⟩ over a latent-canonicalized diagram.

    Every node (observed or latent) has one dedicated exogenous parent;
    ``functions[v]`` has shape ``(*parent_cards, exo_cards[v])`` and holds value
    indices into ``domains[v]``. ``exo_dist[v]`` is that exogenous variable's
    distribution; the joint P(u) is the product over nodes.
    """

    diagram: g.CausalDiagram
    domains: dict[str, tuple[int, ...]]
    functions: dict[str, np.ndarray]
    exo_dist: dict[str, np.ndarray]
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        D = self.diagram
        if D.bidirected:
            raise ValueError("SCM diagram must be latent-canonicalized")
        for v in D.nodes:
            f = self.functions[v]
            want = tuple(len(self.domains[p]) for p in D.parents(v))
            if f.shape[:-1] != want:
                raise ValueError(f"function of {v} has shape {f.shape}, parents need {want}")
            if f.shape[-1] != len(self.exo_dist[v]):
                raise ValueError(f"exogenous card mismatch at {v}")
            if f.min() < 0 or f.max() >= len(self.domains[v]):
                raise ValueError(f"function of {v} leaves its domain")
            p = self.exo_dist[v]
            if (p < 0).any() or abs(p.sum() - 1.0) > 1e-12:
                raise ValueError(f"exogenous distribution of {v} is not normalized")

    # -- structure ------------------------------------------------------

    @property
    def observed(self) -> tuple[str, ...]:
        return self.diagram.observed

    def card(self, v: str) -> int:
        return len(self.domains[v])

    def index_of(self, v: str, value: int) -> int:
        try:
            return self.domains[v].index(value)
        except ValueError:
            raise ValueError(f"{value!r} is not in the domain of {v}") from None

    @cached_property
    def compiled(self):
        D = self.diagram
        order = D.topological_order
        pos = {v: i for i, v in enumerate(order)}
        n = len(order)
        card = np.array([self.card(v) for v in order], dtype=np.int64)
        exo = np.array([len(self.exo_dist[v]) for v in order], dtype=np.int64)
        maxpa = max([len(D.parents(v)) for v in order] + [1])
        pa = -np.ones((n, maxpa), dtype=np.int64)
        npa = np.zeros(n, dtype=np.int64)
        ftabs, eprobs, foff, eoff = [], [], [], []
        fo = eo = 0
        for i, v in enumerate(order):
            ps = D.parents(v)
            npa[i] = len(ps)
            for k, p in enumerate(ps):
                pa[i, k] = pos[p]
            flat = self.functions[v].reshape(-1).astype(np.int64)
            ftabs.append(flat)
            foff.append(fo)
            fo += len(flat)
            eprobs.append(self.exo_dist[v])
            eoff.append(eo)
            eo += len(self.exo_dist[v])
        return dict(order=order, pos=pos, card=card, exo_card=exo, pa=pa, npa=npa,
                    foff=np.array(foff, dtype=np.int64), ftab=np.concatenate(ftabs),
                    eoff=np.array(eoff, dtype=np.int64), eprob=np.concatenate(eprobs))

    @cached_property
    def cpts(self) -> dict[str, np.ndarray]:
        """P(v | pa(v)) with axes (*parents, v), induced by the exogenous distribution."""
        out = {}
        for v in self.diagram.nodes:
            f = self.functions[v]
            onehot = np.eye(self.card(v))[f]  # (*pa, u, v)
            out[v] = np.einsum("...uv,u->...v", onehot, self.exo_dist[v])
        return out

    # -- distributions -----------------------------------------------------

    def _full_table(self, do_names: frozenset[str]) -> np.ndarray:
        """Truncated product of mechanisms over all nodes; do-axes are free indices."""
        key = ("full", do_names)
        if key in self._cache:
            return self._cache[key]
        D = self.diagram
        nodes = D.nodes
        shape = [self.card(v) for v in nodes]
        table = np.ones(shape)
        for v in nodes:
            if v in do_names:
                continue
            axes = [D.index[p] for p in D.parents(v)] + [D.index[v]]
            cpt = self.cpts[v]
            perm = np.argsort(axes)
            view = np.transpose(cpt, perm)
            bshape = [1] * len(nodes)
            for a in axes:
                bshape[a] = shape[a]
            table = table * view.reshape(bshape)
        latent_axes = tuple(D.index[v] for v in nodes if v in D.latent)
        if latent_axes:
            table = table.sum(axis=latent_axes)
        self._cache[key] = table
        return table

    def table(self, do_names: frozenset[str], keep: frozenset[str]) -> np.ndarray:
        """P(keep | do) as an array over observed axes ``do ∪ keep`` in node order.

        Do-axes index the intervention value; the remaining axes form the
        interventional distribution of ``keep``.
        """
        key = ("marg", do_names, keep)
        if key in self._cache:
            return self._cache[key]
        obs = self.observed
        full = self._full_table(do_names)
        drop = tuple(i for i, v in enumerate(obs) if v not in keep and v not in do_names)
        t = full.sum(axis=drop) if drop else full
        self._cache[key] = t
        return t

    def enumerate(self, do: Mapping[str, int] | None = None, use_numba: bool | None = None) -> np.ndarray:
        """Joint over all observed nodes by exhaustive exogenous enumeration."""
        do = dict(do or {})
        c = self.compiled
        do_val = -np.ones(len(c["order"]), dtype=np.int64)
        for v, val in do.items():
            do_val[c["pos"][v]] = self.index_of(v, val)
        flat = _kernels.enumerate_joint(c["card"], c["exo_card"], c["pa"], c["npa"], c["foff"],
                                        c["ftab"], c["eoff"], c["eprob"], do_val, use_numba)
        joint = flat.reshape(tuple(c["card"]))
        # axes are in topological order; reorder to node order and drop latents
        D = self.diagram
        perm = [c["pos"][v] for v in D.nodes]
        joint = np.transpose(joint, perm)
        latent_axes = tuple(D.index[v] for v in D.nodes if v in D.latent)
        return joint.sum(axis=latent_axes) if latent_axes else joint

    def term_value(self, t: Term, values: Mapping[str, int]) -> float:
        """P(outcome | given, do) at concrete values (domain values, not indices)."""
        obs = self.observed
        do_names = frozenset(v.name for v in t.do)
        out = [v for v in t.outcome if v.name not in do_names]
        for v in t.outcome:
            if v.name in do_names:
                raise MalformedExpr(f"{v.name} appears in both outcome and do()")
        given_names = frozenset(v.name for v in t.given)
        out_names = frozenset(v.name for v in out)
        for v in out_names | given_names | do_names:
            if v not in self.domains or v not in obs:
                raise MalformedExpr(f"{v} is not an observed variable of the model")
        num = self.table(do_names, out_names | given_names)
        den = self.table(do_names, given_names) if given_names else None

        def pick(arr, names):
            axes = [v for v in obs if v in names]
            return float(arr[tuple(self.index_of(v, values[v]) for v in axes)])

        p_num = pick(num, out_names | given_names | do_names)
        if den is None:
            return p_num
        p_den = pick(den, given_names | do_names)
        if p_den <= 0.0:
            raise ZeroDenominator(f"P({', '.join(sorted(given_names))}) = 0 at {dict(values)}")
        return p_num / p_den


# -- evaluation ----------------------------------------------------------------


def _dist(M: DiscreteSCM, do: Mapping[str, int], vars: Iterable[str]) -> Dist:
    vars = tuple(vars)
    obs = M.observed
    for v in vars:
        if v not in obs:
            raise ValueError(f"{v} is not observed")
    do_names = frozenset(do)
    keep = frozenset(v for v in vars if v not in do_names)
    arr = M.table(do_names, keep)
    axes = [v for v in obs if v in keep or v in do_names]
    idx = tuple(M.index_of(v, do[v]) if v in do_names else slice(None) for v in axes)
    arr = arr[idx]
    kept_axes = [v for v in axes if v not in do_names]
    # point masses for intervened variables requested as outputs
    out = np.ones([M.card(v) for v in vars])
    for j, v in enumerate(vars):
        if v in do_names:
            shape = [1] * len(vars)
            shape[j] = M.card(v)
            out = out * np.eye(M.card(v))[M.index_of(v, do[v])].reshape(shape)
    perm_src = [kept_axes.index(v) for v in vars if v in keep]
    arr = np.transpose(arr, perm_src) if perm_src else arr
    shape = [M.card(v) if v in keep else 1 for v in vars]
    out = out * np.reshape(arr, shape)
    return Dist(vars, out)


def conditional_table(M: DiscreteSCM, do: Iterable[str], out: Iterable[str], given: Iterable[str] = ()) -> np.ndarray:
    """P(out | given, do(do)) as an array with one axis per observed variable (node
    order); axes of variables not involved have length 1, so tables broadcast."""
    do, out, given = frozenset(do), frozenset(out), frozenset(given)
    obs = M.observed
    involved = do | out | given

    def expand(arr, present):
        shape = [M.card(v) if v in present else 1 for v in obs]
        return arr.reshape(shape)

    num = expand(M.table(do, out | given), do | out | given)
    if not given:
        return num
    den = expand(M.table(do, given), do | given)
    with np.errstate(invalid="ignore", divide="ignore"):
        return num / den


def eval_observational(M: DiscreteSCM, vars: Iterable[str]) -> Dist:
    """Exact marginal over ``vars``."""
    return _dist(M, {}, vars)


def eval_interventional(M: DiscreteSCM, do: Mapping[str, int], vars: Iterable[str]) -> Dist:
    """Exact P(vars | do) in the submodel with the intervened mechanisms replaced by constants."""
    return _dist(M, dict(do), vars)


def eval_nde(M: DiscreteSCM, X, Mv: str | None = None, Y: str | None = None, x_active: int = 1,
             x_ref: int = 0, use_numba: bool | None = None) -> float:
    """E[Y_{x_active, M_{x_ref}}] - E[Y_{x_ref}] by nested counterfactual enumeration.

    ``X`` may instead be a query object carrying ``X``, ``M``, ``Y``,
    ``x_active`` and ``x_ref`` attributes.
    """
    if not isinstance(X, str):
        q = X
        X, Mv, Y, x_active, x_ref = q.X, q.M, q.Y, q.x_active, q.x_ref
    ys = M.domains[Y]
    if not all(isinstance(v, (int, np.integer)) for v in ys):
        raise NonNumericOutcome(Y)
    c = M.compiled
    cross, base = _kernels.nde_terms(
        c["card"], c["exo_card"], c["pa"], c["npa"], c["foff"], c["ftab"], c["eoff"], c["eprob"],
        c["pos"][X], c["pos"][Mv], c["pos"][Y], M.index_of(X, x_active), M.index_of(X, x_ref),
        np.array(ys, dtype=np.float64), use_numba)
    return cross - base


Env = Mapping[str, DiscreteSCM]


def _domain(env: Env, var: str) -> tuple[int, ...]:
    for M in env.values():
        if var in M.domains:
            return M.domains[var]
    raise MalformedExpr(f"no model defines a domain for {var}")


def _eval(e: Expr, env: Env, values: dict[str, int]) -> float:
    if isinstance(e, Term):
        try:
            M = env[e.pop]
        except KeyError:
            raise UnboundPopulation(e.pop) from None
        vals = {}
        for v in e.outcome + e.given + e.do:
            if v.bound:
                vals[v.name] = v.value
            elif v.name in values:
                vals[v.name] = values[v.name]
            else:
                raise MalformedExpr(f"free variable {v.name} has no value")
        return M.term_value(e, vals)
    if isinstance(e, Const):
        return float(e.value)
    if isinstance(e, Value):
        return float(values[e.var])
    if isinstance(e, Sum):
        total = 0.0
        doms = [_domain(env, v) for v in e.over]
        for combo in itertools.product(*doms):
            inner = dict(values)
            inner.update(zip(e.over, combo))
            total += _eval(e.body, env, inner)
        return total
    if isinstance(e, Product):
        out = 1.0
        for f in e.factors:
            out *= _eval(f, env, values)
            if out == 0.0:
                break
        return out
    if isinstance(e, Quotient):
        den = _eval(e.den, env, values)
        if den == 0.0:
            raise ZeroDenominator(f"zero denominator at {values}")
        return _eval(e.num, env, values) / den
    if isinstance(e, Difference):
        return _eval(e.left, env, values) - _eval(e.right, env, values)
    if isinstance(e, Expectation):
        total = 0.0
        for y in _domain(env, e.var):
            if not isinstance(y, (int, np.integer)):
                raise NonNumericOutcome(e.var)
            inner = dict(values)
            inner[e.var] = y
            total += y * _eval(e.of, env, inner)
        return total
    raise MalformedExpr(f"unknown node {e!r}")


def eval_estimand(e: Expr, env: Env | DiscreteSCM, assignment: Mapping[str, int] | None = None):
    """Evaluate an expression; a float when every free variable is assigned,
    otherwise a dict from tuples over the remaining free variables (sorted) to floats."""
    if isinstance(env, DiscreteSCM):
        env = {"src": env}
    assignment = dict(assignment or {})
    rest = sorted(free_variables(e) - set(assignment))
    if not rest:
        return _eval(e, env, assignment)
    out = {}
    for combo in itertools.product(*(_domain(env, v) for v in rest)):
        vals = dict(assignment)
        vals.update(zip(rest, combo))
        out[combo] = _eval(e, env, vals)
    return out


# -- construction ----------------------------------------------------------------


def random_scm(D: g.CausalDiagram, seed: int = 0, cardinalities: int | Mapping[str, int] = 2,
               exo_card: int = 4, latent_card: int = 3) -> DiscreteSCM:
    """Random model compatible with D, deterministic in ``seed``.

    Exogenous tables are drawn uniformly from the simplex; each mechanism maps
    every parent configuration surjectively onto its domain, so all
    conditionals are strictly positive.
    """
    rng = np.random.default_rng(seed)
    C = g.latent_canonicalize(D)
    domains = {}
    for v in C.nodes:
        if v in C.latent:
            k = latent_card
        elif isinstance(cardinalities, int):
            k = cardinalities
        else:
            k = cardinalities.get(v, 2)
        if k < 2:
            raise ValueError("cardinalities must be >= 2")
        domains[v] = tuple(range(k))
    functions, exo = {}, {}
    for v in C.nodes:
        k = len(domains[v])
        ku = max(exo_card, k)
        pshape = tuple(len(domains[p]) for p in C.parents(v))
        f = np.empty(pshape + (ku,), dtype=np.int64)
        for cfg in itertools.product(*(range(s) for s in pshape)):
            row = np.concatenate([np.arange(k), rng.integers(0, k, ku - k)])
            f[cfg] = rng.permutation(row)
        functions[v] = f
        exo[v] = rng.dirichlet(np.ones(ku))
    return DiscreteSCM(C, domains, functions, exo)


def restrict(M: DiscreteSCM, fixed: Mapping[str, int]) -> DiscreteSCM:
    """Model over the diagram without the ``fixed`` root nodes, which are frozen at their values.

    Used to split a model containing selection nodes into its per-population members.
    """
    D = M.diagram
    for s in fixed:
        if D.parents(s):
            raise ValueError(f"{s} is not a root node")
    keep = tuple(v for v in D.nodes if v not in fixed)
    sub = g.CausalDiagram(keep, frozenset(e for e in D.directed if e[0] not in fixed and e[1] not in fixed),
                          frozenset(), D.latent - set(fixed))
    functions = {}
    for v in keep:
        f = M.functions[v]
        idx = tuple(M.index_of(p, fixed[p]) if p in fixed else slice(None) for p in D.parents(v))
        functions[v] = f[idx] if idx else f
    return DiscreteSCM(sub, {v: M.domains[v] for v in keep}, functions, {v: M.exo_dist[v] for v in keep})


# -- file format ------------------------------------------------------------------

FORMAT = "docalc-scm/1"


def dump_scm(M: DiscreteSCM) -> str:
    D = M.diagram
    functions = {}
    for v in D.nodes:
        pars = D.parents(v)
        rows = []
        for cfg in itertools.product(*(range(M.card(p)) for p in pars)):
            vals = M.functions[v][cfg] if cfg else M.functions[v]
            rows.append({"parents": [M.domains[p][i] for p, i in zip(pars, cfg)],
                         "values": [M.domains[v][int(i)] for i in vals]})
        functions[v] = rows
    doc = {
        "format": FORMAT,
        "nodes": list(D.nodes),
        "latent": list(D.sort(D.latent)),
        "parents": {v: list(D.parents(v)) for v in D.nodes},
        "domains": {v: list(M.domains[v]) for v in D.nodes},
        "exogenous": {v: [float(p) for p in M.exo_dist[v]] for v in D.nodes},
        "functions": functions,
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def load_scm(text: str) -> DiscreteSCM:
    doc = json.loads(text)
    if doc.get("format") != FORMAT:
        raise ValueError(f"not a {FORMAT} document")
    nodes = tuple(doc["nodes"])
    directed = frozenset((p, v) for v in nodes for p in doc["parents"][v])
    D = g.CausalDiagram(nodes, directed, frozenset(), frozenset(doc["latent"]))
    domains = {v: tuple(doc["domains"][v]) for v in nodes}
    exo = {v: np.array(doc["exogenous"][v], dtype=np.float64) for v in nodes}
    functions = {}
    for v in nodes:
        pars = D.parents(v)
        pshape = tuple(len(domains[p]) for p in pars)
        f = np.empty(pshape + (len(exo[v]),), dtype=np.int64)
        for row in doc["functions"][v]:
            cfg = tuple(domains[p].index(val) for p, val in zip(pars, row["parents"]))
            f[cfg] = [domains[v].index(x) for x in row["values"]]
        functions[v] = f
    return DiscreteSCM(D, domains, functions, exo)
