"""Exhaustive exogenous enumeration kernels.

Two implementations with identical results: numba ``@njit`` loops and a
vectorized numpy path. ``DOCALC_NO_NUMBA=1`` (or numba being unavailable)
selects numpy.

Compiled model layout, nodes in topological order ``0..n-1``:

- ``card[i]``      domain size of node i
- ``exo_card[i]``  size of node i's dedicated exogenous variable
- ``pa[i, :]``     parent indices, padded with -1; ``npa[i]`` their count
- ``ftab``         concatenated function tables; node i's entry for parent
                   configuration c (mixed radix, first parent most significant)
                   and exogenous value u is ``ftab[foff[i] + c * exo_card[i] + u]``
- ``eprob``        concatenated exogenous distributions at ``eoff[i]``
- ``do_val[i]``    -1, or the value index node i is clamped to
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and os.environ.get("DOCALC_NO_NUMBA", "") not in ("1", "true", "yes")


def _propagate(card, exo_card, pa, npa, foff, ftab, u, do_val, out):
    n = card.shape[0]
    for i in range(n):
        if do_val[i] >= 0:
            out[i] = do_val[i]
            continue
        c = 0
        for k in range(npa[i]):
            p = pa[i, k]
            c = c * card[p] + out[p]
        out[i] = ftab[foff[i] + c * exo_card[i] + u[i]]


def _joint_loop(card, exo_card, pa, npa, foff, ftab, eoff, eprob, do_val, strides, total):
    n = card.shape[0]
    joint = np.zeros(total)
    u = np.zeros(n, dtype=np.int64)
    vals = np.zeros(n, dtype=np.int64)
    n_exo = 1
    for i in range(n):
        n_exo *= exo_card[i]
    for _ in range(n_exo):
        w = 1.0
        for i in range(n):
            w *= eprob[eoff[i] + u[i]]
        _propagate_j(card, exo_card, pa, npa, foff, ftab, u, do_val, vals)
        idx = 0
        for i in range(n):
            idx += vals[i] * strides[i]
        joint[idx] += w
        # mixed-radix increment, last node fastest
        for i in range(n - 1, -1, -1):
            u[i] += 1
            if u[i] < exo_card[i]:
                break
            u[i] = 0
    return joint


def _nde_loop(card, exo_card, pa, npa, foff, ftab, eoff, eprob, x, m, y, x_active, x_ref, y_values):
    n = card.shape[0]
    u = np.zeros(n, dtype=np.int64)
    ref = np.zeros(n, dtype=np.int64)
    mixed = np.zeros(n, dtype=np.int64)
    do_ref = -np.ones(n, dtype=np.int64)
    do_ref[x] = x_ref
    do_mix = -np.ones(n, dtype=np.int64)
    do_mix[x] = x_active
    n_exo = 1
    for i in range(n):
        n_exo *= exo_card[i]
    cross = 0.0
    base = 0.0
    for _ in range(n_exo):
        w = 1.0
        for i in range(n):
            w *= eprob[eoff[i] + u[i]]
        _propagate_j(card, exo_card, pa, npa, foff, ftab, u, do_ref, ref)
        do_mix[m] = ref[m]
        _propagate_j(card, exo_card, pa, npa, foff, ftab, u, do_mix, mixed)
        cross += w * y_values[mixed[y]]
        base += w * y_values[ref[y]]
        for i in range(n - 1, -1, -1):
            u[i] += 1
            if u[i] < exo_card[i]:
                break
            u[i] = 0
    return cross, base


if numba is not None:
    # compiled lazily on first call, so importing with the flag off costs nothing
    _propagate_j = numba.njit(cache=True)(_propagate)
    _joint_numba = numba.njit(cache=True)(_joint_loop)
    _nde_numba = numba.njit(cache=True)(_nde_loop)
else:  # pragma: no cover
    _propagate_j = _propagate


# -- numpy path ------------------------------------------------------------


def _exo_grid(exo_card, eoff, eprob):
    n = len(exo_card)
    grids = np.indices(tuple(int(c) for c in exo_card), dtype=np.int64).reshape(n, -1)
    w = np.ones(grids.shape[1])
    for i in range(n):
        w *= eprob[eoff[i] + grids[i]]
    return grids, w


def _propagate_np(card, exo_card, pa, npa, foff, ftab, grids, do_val):
    n = len(card)
    vals = np.zeros_like(grids)
    for i in range(n):
        if do_val[i] >= 0:
            vals[i] = do_val[i]
            continue
        c = np.zeros(grids.shape[1], dtype=np.int64)
        for k in range(npa[i]):
            p = pa[i, k]
            c = c * card[p] + vals[p]
        vals[i] = ftab[foff[i] + c * exo_card[i] + grids[i]]
    return vals


def _joint_numpy(card, exo_card, pa, npa, foff, ftab, eoff, eprob, do_val, strides, total):
    grids, w = _exo_grid(exo_card, eoff, eprob)
    vals = _propagate_np(card, exo_card, pa, npa, foff, ftab, grids, do_val)
    idx = (vals * strides[:, None]).sum(axis=0)
    return np.bincount(idx, weights=w, minlength=total)


def _nde_numpy(card, exo_card, pa, npa, foff, ftab, eoff, eprob, x, m, y, x_active, x_ref, y_values):
    grids, w = _exo_grid(exo_card, eoff, eprob)
    n = len(card)
    do_ref = -np.ones(n, dtype=np.int64)
    do_ref[x] = x_ref
    ref = _propagate_np(card, exo_card, pa, npa, foff, ftab, grids, do_ref)
    # mediator clamped per exogenous row to its reference-world value
    vals = np.zeros_like(grids)
    for i in range(n):
        if i == x:
            vals[i] = x_active
            continue
        if i == m:
            vals[i] = ref[m]
            continue
        c = np.zeros(grids.shape[1], dtype=np.int64)
        for k in range(npa[i]):
            p = pa[i, k]
            c = c * card[p] + vals[p]
        vals[i] = ftab[foff[i] + c * exo_card[i] + grids[i]]
    # bincount accumulates in row order, matching the compiled loop bit for bit
    zero = np.zeros(len(w), dtype=np.int64)
    cross = np.bincount(zero, weights=w * y_values[vals[y]], minlength=1)[0]
    base = np.bincount(zero, weights=w * y_values[ref[y]], minlength=1)[0]
    return float(cross), float(base)


def enumerate_joint(card, exo_card, pa, npa, foff, ftab, eoff, eprob, do_val, use_numba=None):
    """Exact joint over all nodes (flattened, node 0 most significant)."""
    use = USE_NUMBA if use_numba is None else (use_numba and numba is not None)
    strides = np.ones(len(card), dtype=np.int64)
    for i in range(len(card) - 2, -1, -1):
        strides[i] = strides[i + 1] * card[i + 1]
    total = int(np.prod(card))
    fn = _joint_numba if use else _joint_numpy
    return fn(card, exo_card, pa, npa, foff, ftab, eoff, eprob, np.asarray(do_val, dtype=np.int64), strides, total)


def nde_terms(card, exo_card, pa, npa, foff, ftab, eoff, eprob, x, m, y, x_active, x_ref, y_values, use_numba=None):
    """Return (E[Y_{x_active, M_{x_ref}}], E[Y_{x_ref}]) by exogenous enumeration."""
    use = USE_NUMBA if use_numba is None else (use_numba and numba is not None)
    fn = _nde_numba if use else _nde_numpy
    cross, base = fn(card, exo_card, pa, npa, foff, ftab, eoff, eprob, x, m, y, x_active, x_ref,
                     np.asarray(y_values, dtype=np.float64))
    return float(cross), float(base)
