# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: simplex iterations and row scatter-add.

Semantics are identical to ``_kernels_py``; see that module for the
reference implementation.
"""

from libc.math cimport fabs, INFINITY, isfinite

cdef enum:
    BASIC = 0
    AT_LOWER = 1
    AT_UPPER = 2
    FREE = 3

cdef enum:
    OPTIMAL = 0
    UNBOUNDED = 1
    ITER_LIMIT = 2

cdef double RATIO_TIE = 1e-12
cdef double DEGENERATE_STEP = 1e-12


def simplex_iterate(double[:, ::1] T, double[::1] d, double[::1] x, const double[::1] lo,
                    const double[::1] hi, long long[::1] basis, signed char[::1] state,
                    long long max_iter, long long bland_after, double tol_dual, double tol_piv,
                    long long[::1] counters):
    cdef int status
    with nogil:
        status = _iterate(T, d, x, lo, hi, basis, state, max_iter, bland_after, tol_dual, tol_piv,
                          counters)
    return status


cdef int _iterate(double[:, ::1] T, double[::1] d, double[::1] x, const double[::1] lo,
                  const double[::1] hi, long long[::1] basis, signed char[::1] state,
                  long long max_iter, long long bland_after, double tol_dual, double tol_piv,
                  long long[::1] counters) noexcept nogil:
    cdef Py_ssize_t m = T.shape[0]
    cdef Py_ssize_t N = T.shape[1]
    cdef Py_ssize_t i, j, k, r, b
    cdef double best_score, dj, direction, theta_flip, alpha, ratio, best, theta, delta
    cdef double piv, f, dk, amax
    cdef long long bmin
    cdef bint up, down
    while True:
        if counters[0] >= max_iter:
            return ITER_LIMIT
        # pricing
        k = -1
        best_score = -1.0
        direction = 0.0
        for j in range(N):
            if not (lo[j] < hi[j]):
                continue
            dj = d[j]
            up = (state[j] == AT_LOWER or state[j] == FREE) and dj < -tol_dual
            down = (state[j] == AT_UPPER or state[j] == FREE) and dj > tol_dual
            if up or down:
                if counters[2]:
                    k = j
                    direction = 1.0 if up else -1.0
                    break
                if fabs(dj) > best_score:
                    best_score = fabs(dj)
                    k = j
                    direction = 1.0 if up else -1.0
        if k < 0:
            return OPTIMAL

        if state[k] == FREE:
            theta_flip = INFINITY
        else:
            theta_flip = hi[k] - lo[k]

        # ratio test, pass 1: minimum ratio
        best = INFINITY
        for i in range(m):
            ratio = _row_ratio(T, x, lo, hi, basis, i, k, direction, tol_piv)
            if ratio < best:
                best = ratio

        if best == INFINITY and theta_flip == INFINITY:
            return UNBOUNDED
        if theta_flip <= best:
            delta = direction * theta_flip
            for i in range(m):
                x[basis[i]] = x[basis[i]] - T[i, k] * delta
            if state[k] == AT_LOWER:
                state[k] = AT_UPPER
                x[k] = hi[k]
            else:
                state[k] = AT_LOWER
                x[k] = lo[k]
            counters[0] += 1
            continue

        # pass 2: tie-break among near-minimal rows
        r = -1
        amax = -1.0
        bmin = 0
        for i in range(m):
            ratio = _row_ratio(T, x, lo, hi, basis, i, k, direction, tol_piv)
            if ratio <= best + RATIO_TIE:
                if counters[2]:
                    if r < 0 or basis[i] < bmin:
                        r = i
                        bmin = basis[i]
                else:
                    if fabs(T[i, k]) > amax:
                        amax = fabs(T[i, k])
                        r = i
        theta = _row_ratio(T, x, lo, hi, basis, r, k, direction, tol_piv)
        delta = direction * theta
        x[k] = x[k] + delta
        for i in range(m):
            x[basis[i]] = x[basis[i]] - T[i, k] * delta

        b = basis[r]
        if direction * T[r, k] > 0:
            state[b] = AT_LOWER
            x[b] = lo[b]
        else:
            state[b] = AT_UPPER
            x[b] = hi[b]

        piv = T[r, k]
        for j in range(N):
            T[r, j] = T[r, j] / piv
        for i in range(m):
            if i == r:
                continue
            f = T[i, k]
            for j in range(N):
                T[i, j] = T[i, j] - f * T[r, j]
        dk = d[k]
        for j in range(N):
            d[j] = d[j] - dk * T[r, j]
        basis[r] = k
        state[k] = BASIC

        if theta <= DEGENERATE_STEP:
            counters[1] += 1
            if counters[1] >= bland_after:
                counters[2] = 1
        counters[0] += 1


cdef inline double _row_ratio(double[:, ::1] T, double[::1] x, const double[::1] lo,
                              const double[::1] hi, long long[::1] basis, Py_ssize_t i,
                              Py_ssize_t k, double direction, double tol_piv) noexcept nogil:
    cdef double alpha = direction * T[i, k]
    cdef Py_ssize_t b = basis[i]
    cdef double ratio
    if alpha > tol_piv and isfinite(lo[b]):
        ratio = (x[b] - lo[b]) / alpha
    elif alpha < -tol_piv and isfinite(hi[b]):
        ratio = (hi[b] - x[b]) / (-alpha)
    else:
        return INFINITY
    if ratio < 0.0:
        return 0.0
    return ratio


def scatter_add(double[:, ::1] out, const long long[::1] idx, const double[:, ::1] src):
    cdef Py_ssize_t k, j, row
    cdef Py_ssize_t n = idx.shape[0]
    cdef Py_ssize_t w = src.shape[1]
    if out.shape[1] != w or src.shape[0] != n:
        raise ValueError("shape mismatch in scatter_add")
    for k in range(n):
        row = idx[k]
        if row < 0 or row >= out.shape[0]:
            raise IndexError("scatter index out of range")
    with nogil:
        for k in range(n):
            row = idx[k]
            for j in range(w):
                out[row, j] = out[row, j] + src[k, j]
