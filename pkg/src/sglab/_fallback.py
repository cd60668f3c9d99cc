"""Pure numpy/Python versions of the compiled kernels in sglab._core."""
from itertools import permutations

import numpy as np


def fourpoint_sum(b, Jxx, Jyy, Jxy):
    """sum b[x,y] b[u,v] (Jxx[x,u] Jyy[y,v] / (Jxy[x,v] Jxy[u,y]) - 1) over x,u,y,v."""
    b = np.asarray(b, dtype=float)
    inv = 1.0 / np.asarray(Jxy, dtype=float)
    total = 0.0
    for x in range(b.shape[0]):
        # row u: b[u,v] * inv[x,v]  -> contract with Jyy over v
        inner = (b * inv[x][None, :]) @ Jyy.T          # (u, y)
        s = (inner * inv * b[x][None, :]).sum(axis=1)  # sum over y, per u
        total += float(Jxx[x] @ s)
    return total - b.sum() ** 2


def best_matching(logw):
    logw = np.asarray(logw, dtype=float)
    n = logw.shape[0]
    best, bestp = -np.inf, None
    rows = np.arange(n)
    for p in permutations(range(n)):
        v = logw[rows, p].sum()
        if v > best:
            best, bestp = v, np.array(p, dtype=np.intp)
    return bestp, float(best)


def merge_blocks(dist, thr, block):
    n = len(block)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if block[i] == block[j] or dist[i][j] <= thr:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    return np.array([find(i) for i in range(n)], dtype=np.intp)
