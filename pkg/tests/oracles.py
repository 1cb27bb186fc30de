"""Brute-force references, written without touching the code under test."""

import itertools
import math

import numpy as np


def cells(dims):
    return np.array(list(itertools.product(*(range(n) for n in dims))), dtype=np.int64)


def member_matrix(variant, dims, h=None, r=7, phase=None, causal=False, anchored=False):
    """``M[i, j]`` is True iff cell j is in cell i's pattern (cells in t, y, x order)."""
    T, H, W = dims
    c = cells(dims)
    p, q = c[:, None, :], c[None, :, :]
    if h is None:
        h = max(1, math.isqrt(H))
    k = np.array([min(h, T), h, h])
    if variant == "full":
        m = np.ones((len(c), len(c)), dtype=bool)
    elif variant == "grid":
        m = (p == q).sum(axis=2) >= 2
    elif variant == "local":
        m = (np.abs(p[..., 1] - q[..., 1]) <= r) & (np.abs(p[..., 2] - q[..., 2]) <= r)
    elif variant == "strided" and phase == 1 and anchored:
        d = q - p
        m = np.all((d >= 0) & (d < k), axis=2)
    elif variant == "strided" and phase == 1:
        m = np.all(p // k == q // k, axis=2)
    elif variant == "strided" and phase == 2:
        m = np.all(p % k == q % k, axis=2)
    elif variant == "strided":
        m = member_matrix("strided", dims, h, r, 1) | member_matrix("strided", dims, h, r, 2)
    elif variant == "local_strided":
        m = member_matrix("local", dims, h, r) | member_matrix("strided", dims, h, r)
    else:
        raise ValueError(variant)
    if causal:
        m = m & (q[..., 0] <= p[..., 0])
    return m


def bfs_counts(adj_list, source, layers):
    reached = {source}
    counts = []
    for _ in range(layers):
        reached = reached | {q for c in reached for q in adj_list[c]}
        counts.append(len(reached))
    return counts


def dense_attention_loop(q, k, v):
    """Textbook attention with explicit Python loops over cells."""
    c = q.shape[0]
    qf, kf, vf = q.reshape(c, -1).T, k.reshape(c, -1).T, v.reshape(c, -1).T
    out = np.zeros_like(vf)
    for i in range(len(qf)):
        logits = np.array([qf[i] @ kf[j] for j in range(len(kf))])
        w = np.exp(logits - logits.max())
        w /= w.sum()
        out[i] = sum(w[j] * vf[j] for j in range(len(vf)))
    return out.T.reshape(q.shape)


def route_sum(features, values, member, layers):
    """Sum over every route ``p -> q1 -> ... -> qL`` of the product of dot
    products along it, times the value at the route's end."""
    c = features.shape[0]
    f = features.reshape(c, -1).T
    vf = values.reshape(values.shape[0], -1).T
    nbr = [np.flatnonzero(row) for row in member]
    out = np.zeros_like(vf)

    def walk(start, node, depth, weight):
        if depth == layers:
            out[start] += weight * vf[node]
            return
        for q in nbr[node]:
            walk(start, q, depth + 1, weight * (f[node] @ f[q]))

    for p in range(len(f)):
        walk(p, p, 0, 1.0)
    return out.T.reshape(values.shape)
