# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot loops; the same API lives in sglab._fallback."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def fourpoint_sum(double[:, ::1] b, double[:, ::1] Jxx, double[:, ::1] Jyy, double[:, ::1] Jxy):
    """sum b[x,y] b[u,v] (Jxx[x,u] Jyy[y,v] / (Jxy[x,v] Jxy[u,y]) - 1) over x,u,y,v."""
    cdef Py_ssize_t nx = b.shape[0], ny = b.shape[1]
    cdef Py_ssize_t x, u, y, v
    cdef double total = 0.0, s_uv, bxy, jxu, inner
    cdef double[:, ::1] inv = np.ascontiguousarray(1.0 / np.asarray(Jxy))
    cdef double btot = 0.0
    for x in range(nx):
        for y in range(ny):
            btot += b[x, y]
    for x in range(nx):
        for u in range(nx):
            jxu = Jxx[x, u]
            s_uv = 0.0
            for y in range(ny):
                bxy = b[x, y]
                if bxy == 0.0:
                    continue
                inner = 0.0
                for v in range(ny):
                    inner += b[u, v] * Jyy[y, v] * inv[x, v]
                s_uv += bxy * inv[u, y] * inner
            total += jxu * s_uv
    return total - btot * btot


def best_matching(double[:, ::1] logw):
    """Maximize sum_i logw[i, p[i]] over permutations p (Heap's algorithm)."""
    cdef Py_ssize_t n = logw.shape[0]
    cdef Py_ssize_t i, j, tmp
    cdef double val, best = -INFINITY
    cdef cnp.ndarray[cnp.intp_t, ndim=1] perm = np.arange(n, dtype=np.intp)
    cdef cnp.ndarray[cnp.intp_t, ndim=1] c = np.zeros(n, dtype=np.intp)
    cdef cnp.ndarray[cnp.intp_t, ndim=1] bestp = perm.copy()
    val = 0.0
    for j in range(n):
        val += logw[j, perm[j]]
    best = val
    i = 1
    while i < n:
        if c[i] < i:
            if i % 2 == 0:
                tmp = perm[0]; perm[0] = perm[i]; perm[i] = tmp
            else:
                tmp = perm[c[i]]; perm[c[i]] = perm[i]; perm[i] = tmp
            val = 0.0
            for j in range(n):
                val += logw[j, perm[j]]
            if val > best:
                best = val
                bestp[:] = perm
            c[i] += 1
            i = 1
        else:
            c[i] = 0
            i += 1
    return bestp, best


def merge_blocks(double[:, ::1] dist, double thr, cnp.intp_t[::1] block):
    """Single-linkage merge of blocks whose members come within thr; returns new labels."""
    cdef Py_ssize_t n = dist.shape[0], i, j
    cdef cnp.ndarray[cnp.intp_t, ndim=1] parent = np.arange(n, dtype=np.intp)
    cdef cnp.intp_t ri, rj
    # members of one block start united
    for i in range(n):
        for j in range(i + 1, n):
            if block[i] == block[j] or dist[i, j] <= thr:
                ri = i
                while parent[ri] != ri:
                    ri = parent[ri]
                rj = j
                while parent[rj] != rj:
                    rj = parent[rj]
                if ri != rj:
                    if ri < rj:
                        parent[rj] = ri
                    else:
                        parent[ri] = rj
    out = np.empty(n, dtype=np.intp)
    for i in range(n):
        ri = i
        while parent[ri] != ri:
            ri = parent[ri]
        out[i] = ri
    return out
