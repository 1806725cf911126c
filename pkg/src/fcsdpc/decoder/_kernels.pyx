# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled decoder kernels.

Mirror of ``_pykernels``: identical signatures, identical float operation
order (the extension is built with ``-ffp-contract=off``).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef struct Ctx:
    const double* L
    const double* t
    const double* lev
    const int* nlev
    const unsigned char* first
    const unsigned char* trans
    int N
    int m
    int K
    int* idx
    double* u
    int* best
    double cost
    long long nodes


cdef inline bint allowed(Ctx* c, int i, int k) noexcept nogil:
    cdef int ch = i % c.m
    if i < c.m:
        return c.first[ch * c.K + k]
    return c.trans[(ch * c.K + c.idx[i - c.m]) * c.K + k]


cdef inline bint lex_less(const int* a, const int* b, int n) noexcept nogil:
    cdef int i
    for i in range(n):
        if a[i] != b[i]:
            return a[i] < b[i]
    return False


cdef void search(Ctx* c, int i, double dist, list radii):
    cdef int j, k, ch
    cdef double r0, r, d, lii, ti
    if i == c.N:
        if dist < c.cost or (dist == c.cost and lex_less(c.idx, c.best, c.N)):
            if dist < c.cost:
                radii.append(dist)
            c.cost = dist
            for j in range(c.N):
                c.best[j] = c.idx[j]
        return
    ch = i % c.m
    r0 = 0.0
    for j in range(i):
        r0 = r0 + c.L[i * c.N + j] * c.u[j]
    lii = c.L[i * c.N + i]
    ti = c.t[i]
    for k in range(c.nlev[ch]):
        if not allowed(c, i, k):
            continue
        r = r0 + lii * c.lev[ch * c.K + k]
        r = r - ti
        d = dist + r * r
        c.nodes += 1
        if d > c.cost:
            continue
        c.idx[i] = k
        c.u[i] = c.lev[ch * c.K + k]
        search(c, i + 1, d, radii)


cdef Ctx make_ctx(const double[:, ::1] L, const double[::1] t, const double[:, ::1] levels,
                  const int[::1] nlev, int m, const unsigned char[:, ::1] first,
                  const unsigned char[:, :, ::1] trans):
    cdef Ctx c
    c.N = t.shape[0]
    c.m = m
    c.K = levels.shape[1]
    c.L = &L[0, 0]
    c.t = &t[0]
    c.lev = &levels[0, 0]
    c.nlev = &nlev[0]
    c.first = &first[0, 0]
    c.trans = &trans[0, 0, 0]
    c.idx = <int*> malloc(c.N * sizeof(int))
    c.best = <int*> malloc(c.N * sizeof(int))
    c.u = <double*> malloc(c.N * sizeof(double))
    if c.idx == NULL or c.best == NULL or c.u == NULL:
        free(c.idx); free(c.best); free(c.u)
        raise MemoryError()
    c.nodes = 0
    c.cost = INFINITY
    return c


cdef void free_ctx(Ctx* c):
    free(c.idx)
    free(c.best)
    free(c.u)


def babai(const double[:, ::1] L, const double[::1] t, const double[:, ::1] levels,
          const int[::1] nlev, int m, const unsigned char[:, ::1] first,
          const unsigned char[:, :, ::1] trans):
    cdef Ctx c = make_ctx(L, t, levels, nlev, m, first, trans)
    cdef int i, j, k, ch, best_k
    cdef double r0, target, gap, best_gap
    out = np.empty(c.N, dtype=np.int64)
    cdef long long[::1] o = out
    try:
        for i in range(c.N):
            ch = i % m
            r0 = 0.0
            for j in range(i):
                r0 = r0 + c.L[i * c.N + j] * c.u[j]
            target = (c.t[i] - r0) / c.L[i * c.N + i]
            best_k = -1
            best_gap = 0.0
            for k in range(c.nlev[ch]):
                if not allowed(&c, i, k):
                    continue
                gap = fabs(c.lev[ch * c.K + k] - target)
                if best_k < 0 or gap < best_gap:
                    best_k = k
                    best_gap = gap
            if best_k < 0:
                raise ValueError(
                    f"no admissible level for component {i}: feasible set is empty")
            c.idx[i] = best_k
            c.u[i] = c.lev[ch * c.K + best_k]
            o[i] = best_k
    finally:
        free_ctx(&c)
    return out


cdef double leaf_cost(Ctx* c, const int* idx) noexcept nogil:
    cdef int i, j
    cdef double r, cost = 0.0
    for i in range(c.N):
        c.u[i] = c.lev[(i % c.m) * c.K + idx[i]]
        r = 0.0
        for j in range(i + 1):
            r = r + c.L[i * c.N + j] * c.u[j]
        r = r - c.t[i]
        cost = cost + r * r
    return cost


def sphere(const double[:, ::1] L, const double[::1] t, const double[:, ::1] levels,
           const int[::1] nlev, int m, const unsigned char[:, ::1] first,
           const unsigned char[:, :, ::1] trans, init_idx=None, trace=None):
    """Search seeded with ``init_idx`` (sequential rounding when ``None``)."""
    if trace is not None:
        raise NotImplementedError("tracing is only available in the Python kernels")
    if init_idx is None:
        init_idx = babai(L, t, levels, nlev, m, first, trans)
    cdef Ctx c = make_ctx(L, t, levels, nlev, m, first, trans)
    cdef int i
    out = np.empty(c.N, dtype=np.int64)
    cdef long long[::1] o = out
    try:
        for i in range(c.N):
            c.best[i] = <int> init_idx[i]
        c.cost = leaf_cost(&c, c.best)
        radii = [c.cost]
        search(&c, 0, 0.0, radii)
        for i in range(c.N):
            o[i] = c.best[i]
        cost = c.cost
        nodes = c.nodes
    finally:
        free_ctx(&c)
    return out, cost, nodes, radii


def enumerate_all(const double[:, ::1] L, const double[::1] t, const double[:, ::1] levels,
                  const int[::1] nlev, int m, const unsigned char[:, ::1] first,
                  const unsigned char[:, :, ::1] trans):
    cdef Ctx c = make_ctx(L, t, levels, nlev, m, first, trans)
    cdef int i, N = c.N
    cdef bint ok
    cdef double cost
    cdef long long feasible = 0
    out = np.empty(N, dtype=np.int64)
    cdef long long[::1] o = out
    try:
        for i in range(N):
            c.idx[i] = 0
        while True:
            ok = True
            for i in range(N):
                if not allowed(&c, i, c.idx[i]):
                    ok = False
                    break
            if ok:
                feasible += 1
                cost = leaf_cost(&c, c.idx)
                if cost < c.cost:
                    c.cost = cost
                    for i in range(N):
                        c.best[i] = c.idx[i]
            # odometer, last component fastest: lexicographic order
            i = N - 1
            while i >= 0:
                c.idx[i] += 1
                if c.idx[i] < c.nlev[i % m]:
                    break
                c.idx[i] = 0
                i -= 1
            if i < 0:
                break
        if feasible == 0:
            raise ValueError("feasible set is empty")
        for i in range(N):
            o[i] = c.best[i]
        cost = c.cost
    finally:
        free_ctx(&c)
    return out, cost, feasible
