"""Compiled vs pure-numpy exogenous enumeration.

Times the joint-distribution and natural-direct-effect kernels on random
models of growing size and checks that both paths give identical numbers.

    python3 benchmarks/bench_kernels.py --sizes 5 6 7 --repeat 5
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from docalc import graph as g
from docalc.oracle import _kernels, eval_nde, random_scm


def mediation_diagram(n: int, seed: int) -> g.CausalDiagram:
    """X -> M -> Y, X -> Y plus n - 3 covariates with random arrows and confounding."""
    rng = np.random.default_rng(seed)
    extra = [f"C{i}" for i in range(n - 3)]
    nodes = tuple(extra) + ("X", "M", "Y")
    directed = {("X", "M"), ("M", "Y"), ("X", "Y")}
    for i, a in enumerate(nodes):
        for b in nodes[i + 1:]:
            if (a, b) not in directed and rng.random() < 0.3:
                directed.add((a, b))
    bidirected = set()
    for a, b in zip(extra, extra[1:]):
        if rng.random() < 0.5:
            bidirected.add(frozenset({a, b}))
    return g.CausalDiagram(nodes, frozenset(directed), frozenset(bidirected))


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[4, 5, 6, 7])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _kernels.numba is None:
        print("numba is not installed; nothing to compare")
        return 1

    print(f"{'nodes':>5} {'exo states':>11} {'joint numba':>12} {'joint numpy':>12} "
          f"{'nde numba':>10} {'nde numpy':>10} {'same':>5}")
    for n in args.sizes:
        M = random_scm(mediation_diagram(n, args.seed), seed=args.seed)
        states = int(np.prod([len(M.exo_dist[v]) for v in M.diagram.nodes]))
        # warm the compiled path so timings exclude compilation
        M.enumerate(use_numba=True)
        eval_nde(M, "X", "M", "Y", use_numba=True)
        jn = best_of(lambda: M.enumerate(use_numba=True), args.repeat)
        jp = best_of(lambda: M.enumerate(use_numba=False), args.repeat)
        nn = best_of(lambda: eval_nde(M, "X", "M", "Y", use_numba=True), args.repeat)
        npy = best_of(lambda: eval_nde(M, "X", "M", "Y", use_numba=False), args.repeat)
        same = (np.array_equal(M.enumerate(use_numba=True), M.enumerate(use_numba=False))
                and eval_nde(M, "X", "M", "Y", use_numba=True) == eval_nde(M, "X", "M", "Y", use_numba=False))
        print(f"{n:>5} {states:>11} {jn * 1e3:>10.2f}ms {jp * 1e3:>10.2f}ms "
              f"{nn * 1e3:>8.2f}ms {npy * 1e3:>8.2f}ms {str(same):>5}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
