"""Compiled inner loops for the stochastic approximation solvers.

Both kernels consume pre-sampled ``(costs, post, zs)`` rows and mutate their
state arrays in place. They return the updated ``(n, n_avg)`` counters.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _winner(costs_row, post_row, w):
    K, M = w.shape
    best = 0
    best_score = np.inf
    for k in range(K):
        s = costs_row[k]
        for z in range(M):
            s -= post_row[z] * w[k, z]
        if s < best_score:
            best_score = s
            best = k
    return best


@njit(cache=True)
def sa_optimal_p(v, w, vbar, n, n_avg, avg_start, alpha, costs, post, zs, dirs):
    """Projected-space SA on the region-size-free dual.

    ``dirs[z]`` is the (signed) update direction for a draw from group ``z``;
    it is orthogonal to ``q`` so ``w`` moves by the same increment as ``v``.
    """
    K, M = v.shape
    for i in range(zs.shape[0]):
        k = _winner(costs[i], post[i], w)
        step = alpha / math.sqrt(n + 1.0)
        z = zs[i]
        for j in range(M):
            d = step * dirs[z, j]
            v[k, j] += d
            w[k, j] += d
        n += 1
        if n >= avg_start:
            n_avg += 1
            for a in range(K):
                for b in range(M):
                    vbar[a, b] += (v[a, b] - vbar[a, b]) / n_avg
    return n, n_avg


@njit(cache=True)
def sa_fixed_p(w, vbar, n, n_avg, avg_start, alpha, costs, post, zs, pq):
    """SA on the fixed-region-size dual; ``pq[k, z] = p_k q_z``."""
    K, M = w.shape
    for i in range(zs.shape[0]):
        k = _winner(costs[i], post[i], w)
        step = alpha / math.sqrt(n + 1.0)
        z = zs[i]
        for a in range(K):
            for b in range(M):
                ind = 1.0 if (a == k and b == z) else 0.0
                w[a, b] += step * (pq[a, b] - ind)
        n += 1
        if n >= avg_start:
            n_avg += 1
            for a in range(K):
                for b in range(M):
                    vbar[a, b] += (w[a, b] - vbar[a, b]) / n_avg
    return n, n_avg


@njit(cache=True)
def exact_ascent(C, post, pis, q, pq, fixed, alpha, N, checkpoints):
    """Deterministic supergradient ascent over sites with Polyak averaging.

    ``fixed`` selects the fixed-p gradient ``pq - E[1{Z=z} 1{k=Y}]``; otherwise
    the projected gradient ``-E[1{k=Y}(1{Z=z} - q_Z q_z / q'q)]`` is used.
    Returns the averaged iterate and the dual value at the average for every
    entry of ``checkpoints`` (``pq`` is zero in the free-p case).
    """
    S, K = C.shape
    M = q.size
    qq = 0.0
    for z in range(M):
        qq += q[z] * q[z]
    v = np.zeros((K, M))
    vbar = np.zeros((K, M))
    g = np.zeros((K, M))
    hist = np.empty(checkpoints.size)
    c = 0
    for n in range(N):
        if fixed:
            for a in range(K):
                for b in range(M):
                    g[a, b] = pq[a, b]
        else:
            g[:, :] = 0.0
        for s in range(S):
            k = _winner(C[s], post[s], v)
            if fixed:
                for z in range(M):
                    g[k, z] -= pis[s] * post[s, z]
            else:
                eq = 0.0
                for z in range(M):
                    eq += post[s, z] * q[z]
                for z in range(M):
                    g[k, z] -= pis[s] * (post[s, z] - eq * q[z] / qq)
        step = alpha / math.sqrt(n + 1.0)
        for a in range(K):
            for b in range(M):
                v[a, b] += step * g[a, b]
                vbar[a, b] += (v[a, b] - vbar[a, b]) / (n + 1)
        while c < checkpoints.size and checkpoints[c] == n + 1:
            tot = 0.0
            for s in range(S):
                best = np.inf
                for k in range(K):
                    sc = C[s, k]
                    for z in range(M):
                        sc -= post[s, z] * vbar[k, z]
                    if sc < best:
                        best = sc
                tot += pis[s] * best
            for a in range(K):
                for b in range(M):
                    tot += pq[a, b] * vbar[a, b]
            hist[c] = tot
            c += 1
    return vbar, hist
