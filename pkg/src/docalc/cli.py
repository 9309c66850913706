"""Command-line front end.

Exit status: 0 for a positive answer, 1 for a negative answer within budget,
2 for bad input.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import graph as g
from .dsl import ParseError, parse_expr, parse_graph_dsl, parse_studies
from .expr import Expr, MalformedExpr, Term, free_variables, render, to_structured

EXIT_OK, EXIT_NEGATIVE, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _graph(args):
    if not args.graph:
        raise InputError("--graph is required")
    return parse_graph_dsl(_read(args.graph))


def _causal(obj) -> g.CausalDiagram:
    from .transport import SelectionDiagram

    return obj.as_causal() if isinstance(obj, SelectionDiagram) else obj


def _term(text: str | None, names, flag="--effect") -> Term:
    if not text:
        raise InputError(f"{flag} is required")
    e = parse_expr(text, names)
    if not isinstance(e, Term):
        raise InputError(f"{flag} must be a single P(...) term")
    return e


def _names(vs) -> list[str]:
    return [v.name for v in vs]


def _split_list(text: str | None) -> list[str]:
    return [x.strip() for x in (text or "").split(",") if x.strip()]


def _emit(out, fmt: str, payload: dict, text_lines: list[str], expr: Expr | None = None):
    if fmt == "structured":
        out.write(json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n")
        return
    if fmt == "latex" and expr is not None:
        text_lines = [render(expr, "latex")] + text_lines[1:]
    out.write("\n".join(text_lines) + "\n")


def _expr_payload(e: Expr) -> dict:
    return {"expr": to_structured(e), "text": render(e), "latex": render(e, "latex")}


# -- verbs -----------------------------------------------------------------------------


def cmd_identify(args, out) -> int:
    from .docalculus import NotFound, derive
    from .identify import identify_effect

    D = _causal(_graph(args))
    t = _term(args.effect, D.nodes)
    Y, X, C = _names(t.outcome), _names(t.do), _names(t.given)
    if args.engine == "derive":
        try:
            d = derive(D, t, "do-free", max_depth=args.budget_depth, width=args.budget_width)
        except NotFound as exc:
            _emit(out, args.format, {"command": "identify", "status": "not-found", "reason": str(exc),
                                     "stats": exc.stats}, [f"no do-free form found: {exc}"])
            return EXIT_NEGATIVE
        lines = [render(d.end)]
        if args.trace:
            lines += [f"  {s.rule}: {render(s.after)}" + (f"   [{s.certificate.describe()}]" if s.certificate else "")
                      for s in d.steps]
        _emit(out, args.format, {"command": "identify", "status": "identified", "method": "derivation",
                                 "estimand": _expr_payload(d.end), "derivation": d.to_dict()}, lines, d.end)
        return EXIT_OK
    r = identify_effect(D, Y, X, C)
    if not r.ok:
        payload = {"command": "identify", "status": "non-identifiable",
                   "witness": {"component": list(D.sort(r.component)), "within": list(D.sort(r.within))}}
        if args.trace:
            payload["trace"] = list(r.trace)
        _emit(out, args.format, payload, ["not identifiable", r.describe(D)] + (list(r.trace) if args.trace else []))
        return EXIT_NEGATIVE
    payload = {"command": "identify", "status": "identified", "method": r.method, "estimand": _expr_payload(r.expr)}
    if args.trace:
        payload["trace"] = list(r.trace)
    _emit(out, args.format, payload, [render(r.expr)] + (list(r.trace) if args.trace else []), r.expr)
    return EXIT_OK


def cmd_mediate(args, out) -> int:
    from .mediation import (MediationQuery, SearchExhausted, cde_estimand, check_set_A, check_set_B,
                            nde_estimand)

    D = _causal(_graph(args))
    q = MediationQuery(args.treatment, args.mediator, args.outcome, args.x_active, args.x_ref)
    if args.assumptions:
        W = _split_list(args.W)
        if args.assumptions == "A":
            rep = check_set_A(D, q, W, _split_list(args.W_mediator) if args.W_mediator is not None else None,
                              _split_list(args.W_outcome) if args.W_outcome is not None else None)
        else:
            rep = check_set_B(D, q, W)
        payload = {"command": "mediate", "assumption_set": rep.set_name, "status": rep.overall,
                   "W": [list(D.sort(w)) for w in rep.W_used],
                   "conditions": {c.name: c.holds for c in rep.conditions}}
        _emit(out, args.format, payload, rep.describe(D).splitlines())
        return EXIT_OK if rep.holds else EXIT_NEGATIVE
    if args.cde:
        r = cde_estimand(D, q)
        if not r.ok:
            _emit(out, args.format, {"command": "mediate", "effect": "CDE", "status": "non-identifiable"},
                  ["CDE not identifiable", r.describe(D)])
            return EXIT_NEGATIVE
        _emit(out, args.format, {"command": "mediate", "effect": "CDE", "status": "identified",
                                 "estimand": _expr_payload(r.expr)}, [render(r.expr)], r.expr)
        return EXIT_OK
    try:
        r = nde_estimand(D, q)
    except SearchExhausted as exc:
        lines = ["NDE not identified by any covariate set"]
        if args.trace:
            for rep in exc.reports:
                lines += rep.describe(D).splitlines()
        _emit(out, args.format, {"command": "mediate", "effect": "NDE", "status": "not-identified",
                                 "tried": [list(D.sort(rep.W_used[0])) for rep in exc.reports]}, lines)
        return EXIT_NEGATIVE
    lines = [render(r.expr)]
    if args.trace:
        lines += r.report.describe(D).splitlines()
    _emit(out, args.format, {"command": "mediate", "effect": "NDE", "status": "identified",
                             "W": list(D.sort(r.W)), "estimand": _expr_payload(r.expr)}, lines, r.expr)
    return EXIT_OK


def cmd_transport(args, out) -> int:
    from .transport import SelectionDiagram, attach_selection, transport_effect

    SD = _graph(args)
    if not isinstance(SD, SelectionDiagram):
        SD = attach_selection(SD, ())
    t = _term(args.effect, SD.as_causal().nodes)
    r = transport_effect(SD, _names(t.outcome), _names(t.do), max_depth=args.budget_depth, width=args.budget_width)
    if not r.ok:
        _emit(out, args.format, {"command": "transport", "status": "not-transportable", "reason": r.reason},
              [f"not transportable: {r.reason}"])
        return EXIT_NEGATIVE
    lines = [render(r.expr)]
    if args.trace:
        d = r.derivation
        lines += [f"  {s.rule}: {render(s.after)}" + (f"   [{s.certificate.describe()}]" if s.certificate else "")
                  for s in d.steps]
    payload = {"command": "transport", "status": "transportable", "formula": _expr_payload(r.expr)}
    if args.trace:
        payload["derivation"] = r.derivation.to_dict()
    _emit(out, args.format, payload, lines, r.expr)
    return EXIT_OK


def cmd_synthesize(args, out) -> int:
    from .transport import meta_synthesize

    if not args.studies:
        raise InputError("--studies is required")
    base, studies = parse_studies(_read(args.studies))
    if args.use:
        wanted = _split_list(args.use)
        by = {s.label: s for s in studies}
        missing = [w for w in wanted if w not in by]
        if missing:
            raise InputError(f"unknown studies: {', '.join(missing)}")
        studies = [by[w] for w in wanted]
    R = _term(args.effect, base.nodes).replace(pop="tgt")
    plan = meta_synthesize(base, R, studies)
    if not plan.ok:
        _emit(out, args.format, {"command": "synthesize", "status": "unsynthesizable",
                                 "uncovered": [render(t) for t in plan.uncovered],
                                 "contributions": plan.contributions},
              ["unsynthesizable; uncovered sub-relations:"] + [f"  {render(t)}" for t in plan.uncovered])
        return EXIT_NEGATIVE
    lines = [render(plan.composition)]
    if args.trace:
        lines += [f"  {render(s.relation)} <- study {s.study}: {render(s.formula)}" for s in plan.sub_relations]
    _emit(out, args.format, {"command": "synthesize", "status": "synthesizable", "shape": plan.shape,
                             "plan": _expr_payload(plan.composition),
                             "sub_relations": [{"relation": render(s.relation), "study": s.study,
                                                "formula": render(s.formula)} for s in plan.sub_relations],
                             "contributions": plan.contributions}, lines, plan.composition)
    return EXIT_OK


def cmd_adapt(args, out) -> int:
    from .transport import SelectionDiagram, adapt_factorization, attach_selection

    SD = _graph(args)
    if not isinstance(SD, SelectionDiagram):
        SD = attach_selection(SD, ())
    t = _term(args.query, SD.base.nodes, "--query")
    plan = adapt_factorization(SD, t)
    lines = [render(plan.answer)]
    lines += [f"  {render(f)}: {tag}" for f, tag in plan.factors]
    lines.append("target measurements: " + (", ".join(SD.base.sort(plan.target_measurements)) or "none"))
    _emit(out, args.format, {"command": "adapt", "answer": _expr_payload(plan.answer),
                             "factors": [[render(f), tag] for f, tag in plan.factors],
                             "target_measurements": list(SD.base.sort(plan.target_measurements))},
          lines, plan.answer)
    return EXIT_OK


def _assignment(text: str | None) -> dict[str, int]:
    out = {}
    for part in _split_list(text):
        k, sep, v = part.partition("=")
        if not sep:
            raise InputError(f"bad assignment {part!r}")
        try:
            out[k.strip()] = int(v)
        except ValueError:
            raise InputError(f"bad value in {part!r}") from None
    return out


def cmd_eval(args, out) -> int:
    from .oracle import eval_estimand, load_scm, random_scm

    env = {}
    if args.scm:
        env["src"] = load_scm(_read(args.scm))
    for spec in args.env or []:
        pop, sep, path = spec.partition("=")
        if not sep:
            raise InputError(f"bad --env {spec!r}; expected POP=FILE")
        env[pop.strip()] = load_scm(_read(path))
    if not env:
        if not args.graph:
            raise InputError("--scm, --env or --graph is required")
        env["src"] = random_scm(_causal(_graph(args)), seed=args.seed)
    names = sorted({n for M in env.values() for n in M.observed})
    if not args.query:
        raise InputError("--query is required")
    e = parse_expr(args.query, names)
    assign = _assignment(args.assign)
    val = eval_estimand(e, env, assign)
    if isinstance(val, dict):
        free = sorted(free_variables(e) - set(assign))
        rows = [[list(k), v] for k, v in sorted(val.items())]
        payload = {"command": "eval", "query": render(e), "variables": free, "table": rows}
        lines = [f"{render(e)} over {', '.join(free)}"] + [f"  {k} -> {v!r}" for k, v in rows]
    else:
        payload = {"command": "eval", "query": render(e), "value": val}
        lines = [repr(val)]
    _emit(out, args.format, payload, lines)
    return EXIT_OK


def cmd_make_scm(args, out) -> int:
    from .oracle import dump_scm, random_scm

    M = random_scm(_causal(_graph(args)), seed=args.seed, cardinalities=args.card)
    out.write(dump_scm(M) + "\n")
    return EXIT_OK


def _binding(text: str | None, names) -> dict[str, list[str]]:
    b = {"X": [], "Y": [], "Z": [], "W": [], "A": [], "B": [], "C": []}
    direction = "forward"
    lookup = {n.lower(): n for n in names}
    for part in (text or "").split(";"):
        part = part.strip()
        if not part:
            continue
        k, sep, v = part.partition("=")
        k = k.strip()
        if not sep:
            raise InputError(f"bad binding {part!r}")
        if k.lower() == "direction":
            direction = v.strip()
            continue
        if k.upper() not in b:
            raise InputError(f"unknown binding key {k!r}")
        vals = []
        for x in _split_list(v):
            if x not in names and x.lower() not in lookup:
                raise g.UnknownNode(f"unknown node {x!r}")
            vals.append(x if x in names else lookup[x.lower()])
        b[k.upper()] = vals
    b["direction"] = direction
    return b


def cmd_check_rule(args, out) -> int:
    from .docalculus import RuleBinding, rule_applicable

    D = _causal(_graph(args))
    b = _binding(args.bind, D.nodes)
    rb = RuleBinding(b["X"], b["Y"], b["Z"], b["W"], b["direction"])
    cert = rule_applicable(D, args.rule, rb)
    payload = {"command": "check-rule", "rule": args.rule, "binding": rb.to_dict(D),
               "verdict": cert.verdict, "query": cert.describe(),
               "witness": list(cert.witness) if cert.witness else None}
    lines = [f"{args.rule}: {'licensed' if cert.separated else 'refused'}", cert.describe()]
    _emit(out, args.format, payload, lines)
    return EXIT_OK if cert.separated else EXIT_NEGATIVE


def cmd_dsep(args, out) -> int:
    D = _causal(_graph(args))
    b = _binding(args.sets, D.nodes)
    cert = g.d_separated(D, b["A"], b["B"], b["C"])
    payload = {"command": "d-sep", "verdict": cert.verdict, "query": cert.describe(),
               "witness": list(cert.witness) if cert.witness else None}
    _emit(out, args.format, payload, [cert.describe()])
    return EXIT_OK if cert.separated else EXIT_NEGATIVE


# -- parser ---------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--graph", help="graph DSL file")
    common.add_argument("--format", choices=("text", "latex", "structured"), default="text")
    common.add_argument("--budget-depth", type=int, default=8)
    common.add_argument("--budget-width", type=int, default=512)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--trace", action="store_true", help="print derivations and checks")

    p = argparse.ArgumentParser(prog="docalc", description="Symbolic do-calculus toolkit.")
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("identify", parents=[common], help="identify P(y | do(x), c)")
    s.add_argument("--effect", required=True)
    s.add_argument("--engine", choices=("auto", "derive"), default="auto",
                   help="auto: shortcuts then complete recursion; derive: rule search")
    s.set_defaults(fn=cmd_identify)

    s = sub.add_parser("mediate", parents=[common], help="direct effects and assumption checks")
    s.add_argument("--treatment", default="X")
    s.add_argument("--mediator", default="M")
    s.add_argument("--outcome", default="Y")
    s.add_argument("--x-active", type=int, default=1)
    s.add_argument("--x-ref", type=int, default=0)
    s.add_argument("--cde", action="store_true", help="controlled direct effect instead of NDE")
    s.add_argument("--assumptions", choices=("A", "B"))
    s.add_argument("--W", default="", help="covariate set, comma separated")
    s.add_argument("--W-mediator", help="separate set for the treatment-mediator effect (set A)")
    s.add_argument("--W-outcome", help="separate set for the joint effect on the outcome (set A)")
    s.set_defaults(fn=cmd_mediate)

    s = sub.add_parser("transport", parents=[common], help="transport an effect to the target population")
    s.add_argument("--effect", required=True)
    s.set_defaults(fn=cmd_transport)

    s = sub.add_parser("synthesize", parents=[common], help="combine studies into a target estimator")
    s.add_argument("--studies", required=True)
    s.add_argument("--effect", required=True)
    s.add_argument("--use", help="comma separated study labels (default: all)")
    s.set_defaults(fn=cmd_synthesize)

    s = sub.add_parser("adapt", parents=[common], help="re-learn only the mechanisms that changed")
    s.add_argument("--query", required=True)
    s.set_defaults(fn=cmd_adapt)

    s = sub.add_parser("eval", parents=[common], help="evaluate an expression on discrete models")
    s.add_argument("--scm", help="model file bound to the default population")
    s.add_argument("--env", action="append", help="POP=FILE binding, repeatable")
    s.add_argument("--query", required=True)
    s.add_argument("--assign", help="values for free variables, e.g. X=1,Y=0")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("make-scm", parents=[common], help="write a random model compatible with a graph")
    s.add_argument("--card", type=int, default=2)
    s.set_defaults(fn=cmd_make_scm)

    s = sub.add_parser("check-rule", parents=[common], help="test a do-calculus rule's side condition")
    s.add_argument("--rule", choices=("R1", "R2", "R3"), required=True)
    s.add_argument("--bind", required=True, help='e.g. "X=;Y=Y;Z=X;W="')
    s.set_defaults(fn=cmd_check_rule)

    s = sub.add_parser("d-sep", parents=[common], help="d-separation query with witness path")
    s.add_argument("--sets", required=True, help='e.g. "A=X;B=Y;C=Z"')
    s.set_defaults(fn=cmd_dsep)
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.fn(args, out)
    except (InputError, ParseError, MalformedExpr, g.DiagramError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        sys.stderr.write(f"docalc: error: {msg}\n")
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
