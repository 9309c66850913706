"""Search for two models that agree observationally but disagree on a causal query."""

from __future__ import annotations

import numpy as np
from scipy.optimize import least_squares

from .. import graph as g
from ..expr import Term, Var
from .scm import DiscreteSCM, eval_estimand, eval_observational, random_scm


def _query_values(M: DiscreteSCM, q: Term) -> np.ndarray:
    out = eval_estimand(q.replace(pop="src"), M)
    if isinstance(out, dict):
        return np.array([out[k] for k in sorted(out)])
    return np.array([out])


def _with_exo(M: DiscreteSCM, theta: np.ndarray) -> DiscreteSCM:
    exo, k = {}, 0
    for v in M.diagram.nodes:
        n = len(M.exo_dist[v])
        z = theta[k:k + n]
        z = np.exp(z - z.max())
        exo[v] = z / z.sum()
        k += n
    return DiscreteSCM(M.diagram, M.domains, M.functions, exo)


def total_variation(M1: DiscreteSCM, M2: DiscreteSCM) -> float:
    obs = M1.observed
    a = eval_observational(M1, obs).table
    b = eval_observational(M2, obs).table
    return 0.5 * float(np.abs(a - b).sum())


def falsify_identifiability(D: g.CausalDiagram, query, budget: int = 10_000, seed: int = 0,
                            gap: float = 0.05, tv_tol: float = 1e-9, exo_card: int = 4):
    """Return (M1, M2) with matching observed joints and query values differing by ≥ ``gap``.

    M1 is drawn at random; M2 keeps M1's mechanisms and starts from fresh
    exogenous tables, which are then fitted to M1's observed joint by least
    squares. Restarts redraw both models. ``budget`` caps the total number of
    model evaluations. None means no witness was found, not that the query is
    identifiable.

    ``query`` is a Term or a pair (outcome names, action names); the pair form
    admits outcomes that are also acted on, such as P(x | do(x)).
    """
    if not isinstance(query, Term):
        out, do = (frozenset(s) for s in query)
        if out <= do:
            return None
        query = Term(tuple(Var(v) for v in D.sort(out - do)), (), tuple(Var(v) for v in D.sort(do)))
    if {v.name for v in query.outcome} <= {v.name for v in query.do}:
        return None
    rng = np.random.default_rng(seed)
    used = 0
    restart = 0
    while used < budget:
        M1 = random_scm(D, seed=int(rng.integers(2**31)), exo_card=exo_card)
        target = eval_observational(M1, M1.observed).table.ravel()
        q1 = _query_values(M1, query)
        sizes = [len(M1.exo_dist[v]) for v in M1.diagram.nodes]
        theta0 = rng.normal(scale=2.0, size=sum(sizes))

        def resid(theta):
            M = _with_exo(M1, theta)
            return eval_observational(M, M.observed).table.ravel() - target

        fit = least_squares(resid, theta0, xtol=1e-15, ftol=1e-15, gtol=1e-15,
                            max_nfev=max(1, min(400, budget - used)))
        used += fit.nfev + 1
        restart += 1
        M2 = _with_exo(M1, fit.x)
        if total_variation(M1, M2) > tv_tol:
            continue
        if np.max(np.abs(_query_values(M2, query) - q1)) >= gap:
            return M1, M2
    return None
