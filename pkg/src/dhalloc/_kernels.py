"""Compiled inner loops for whole-run simulation.

Every kernel consumes pre-drawn random arrays, so a run is a pure function
of its inputs and the Python fallback (``kernel.py_func``) gives identical
results.
"""

import numpy as np
from numba import njit


@njit(nogil=True, cache=True)
def _pick(loads, cand, keys, d):
    best = cand[0]
    best_key = keys[0]
    for k in range(1, d):
        c = cand[k]
        if loads[c] < loads[best] or (loads[c] == loads[best] and keys[k] > best_key):
            best = c
            best_key = keys[k]
    return best


@njit(nogil=True, cache=True)
def place_random_batch(loads, perm, offsets, keys):
    """Least loaded of d distinct uniform bins, via partial Fisher-Yates on ``perm``.

    ``offsets[t, k]`` is uniform on [0, n - k). ``perm`` is left shuffled,
    which keeps later draws uniform.
    """
    steps, d = offsets.shape
    cand = np.empty(d, dtype=np.int64)
    for t in range(steps):
        for k in range(d):
            j = k + offsets[t, k]
            tmp = perm[k]
            perm[k] = perm[j]
            perm[j] = tmp
            cand[k] = perm[k]
        loads[_pick(loads, cand, keys[t], d)] += 1


@njit(nogil=True, cache=True)
def place_double_batch(loads, f, g, keys):
    n = loads.shape[0]
    steps, d = keys.shape
    cand = np.empty(d, dtype=np.int64)
    for t in range(steps):
        for k in range(d):
            cand[k] = (f[t] + k * g[t]) % n
        loads[_pick(loads, cand, keys[t], d)] += 1


@njit(nogil=True, cache=True)
def place_modified_batch(loads, perm, offsets, keys, uniform_branch, single_bin):
    steps, d = offsets.shape
    cand = np.empty(d, dtype=np.int64)
    for t in range(steps):
        if uniform_branch[t]:
            loads[single_bin[t]] += 1
            continue
        for k in range(d):
            j = k + offsets[t, k]
            tmp = perm[k]
            perm[k] = perm[j]
            perm[j] = tmp
            cand[k] = perm[k]
        loads[_pick(loads, cand, keys[t], d)] += 1


@njit(nogil=True, cache=True)
def eta_counts(loads, rank, d):
    """Winner count per bin over every hash pair (f, g), g != 0."""
    n = loads.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    cand = np.empty(d, dtype=np.int64)
    keys = np.empty(d, dtype=np.int64)
    for f in range(n):
        for g in range(1, n):
            c = f
            for k in range(d):
                cand[k] = c
                keys[k] = rank[c]
                c += g
                if c >= n:
                    c -= n
            counts[_pick(loads, cand, keys, d)] += 1
    return counts
