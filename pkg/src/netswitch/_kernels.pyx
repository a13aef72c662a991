# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Mirrors ``_pykernels.py`` operation for operation."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()

BACKEND = "cython"

cdef enum:
    MAX_PARTIALS = 256


cdef double _fsum(const double* xs, Py_ssize_t n) noexcept nogil:
    # Shewchuk partials with CPython's final rounding, so the result is the
    # correctly rounded sum and matches math.fsum for finite inputs
    cdef double partials[MAX_PARTIALS]
    cdef Py_ssize_t i, j, k, m = 0
    cdef double x, y, t, hi, lo = 0.0, yr
    for k in range(n):
        x = xs[k]
        i = 0
        for j in range(m):
            y = partials[j]
            if abs(x) < abs(y):
                t = x
                x = y
                y = t
            hi = x + y
            lo = y - (hi - x)
            if lo != 0.0:
                partials[i] = lo
                i += 1
            x = hi
        m = i + 1
        partials[i] = x
    hi = 0.0
    if m > 0:
        m -= 1
        hi = partials[m]
        lo = 0.0
        while m > 0:
            x = hi
            m -= 1
            y = partials[m]
            hi = x + y
            yr = hi - x
            lo = y - yr
            if lo != 0.0:
                break
        if m > 0 and ((lo < 0.0 and partials[m - 1] < 0.0) or (lo > 0.0 and partials[m - 1] > 0.0)):
            y = lo * 2.0
            x = hi + y
            yr = x - hi
            if y == yr:
                hi = x
    return hi


def fsum(const double[::1] xs):
    """Correctly rounded sum (exposed for tests)."""
    if xs.shape[0] == 0:
        return 0.0
    return _fsum(&xs[0], xs.shape[0])


def critic_steps(double[:, :, ::1] q, double[:, :, ::1] qt, const double[:, ::1] cdf,
                 const long long[::1] s, const long long[::1] a, const double[::1] r,
                 const long long[::1] s_next, const long long[:, :, ::1] idx,
                 const double[:, :, ::1] u, const double[::1] cost_terms,
                 double gamma, double lr, double grad_clip, double rho,
                 const double[::1] pi_s0, long long s0, double[::1] losses, double[::1] vhat):
    cdef Py_ssize_t T = idx.shape[0], m = idx.shape[1], B = idx.shape[2]
    cdef Py_ssize_t S = q.shape[1], A = q.shape[2]
    cdef Py_ssize_t t, i, b, j, k, ss, aa, s2, a2, x, y_
    cdef double scale = 2.0 / B
    cdef double tmin, yv, d, norm, loss_sum, f, best
    g_arr = np.empty(S * A)
    gg_arr = np.empty(S * A)
    diff_arr = np.empty(B)
    cdef double[::1] g = g_arr
    cdef double[::1] gg = gg_arr
    cdef double[::1] diff = diff_arr
    row_arr = np.empty(A)
    cdef double[::1] row = row_arr
    for t in range(T):
        loss_sum = 0.0
        for i in range(m):
            for j in range(S * A):
                g[j] = 0.0
            for b in range(B):
                k = idx[t, i, b]
                ss = s[k]
                aa = a[k]
                s2 = s_next[k]
                a2 = 0
                while a2 < A - 1 and u[t, i, b] >= cdf[s2, a2]:
                    a2 += 1
                tmin = qt[0, s2, a2]
                for x in range(1, m):
                    if qt[x, s2, a2] < tmin:
                        tmin = qt[x, s2, a2]
                yv = (r[k] - cost_terms[t]) + gamma * tmin
                d = q[i, ss, aa] - yv
                diff[b] = d
                g[ss * A + aa] += d
            for j in range(S * A):
                g[j] = g[j] * scale
            if grad_clip > 0.0:
                for j in range(S * A):
                    gg[j] = g[j] * g[j]
                norm = sqrt(_fsum(&gg[0], S * A))
                if norm > grad_clip:
                    f = grad_clip / norm
                    for j in range(S * A):
                        g[j] = g[j] * f
            for x in range(S):
                for y_ in range(A):
                    q[i, x, y_] = q[i, x, y_] - lr * g[x * A + y_]
            for b in range(B):
                diff[b] = diff[b] * diff[b]
            loss_sum += _fsum(&diff[0], B) / B
        for i in range(m):
            for x in range(S):
                for y_ in range(A):
                    qt[i, x, y_] = rho * qt[i, x, y_] + (1.0 - rho) * q[i, x, y_]
        losses[t] = loss_sum / m
        for y_ in range(A):
            best = q[0, s0, y_]
            for x in range(1, m):
                if q[x, s0, y_] < best:
                    best = q[x, s0, y_]
            row[y_] = pi_s0[y_] * best
        vhat[t] = _fsum(&row[0], A)


def min_cost_flow(const long long[::1] supply, const long long[::1] demand, const double[:, ::1] cost):
    cdef Py_ssize_t n = supply.shape[0], m = demand.shape[0]
    cdef Py_ssize_t i, j, jb, rnd
    cdef long long push, total = 0
    cdef double v, cmax = 0.0, eps
    cdef bint changed
    rem_s_arr = np.array(supply, dtype=np.int64)
    rem_d_arr = np.array(demand, dtype=np.int64)
    flow_arr = np.zeros((n, m), dtype=np.int64)
    D_arr = np.empty(n)
    E_arr = np.empty(m)
    pd_arr = np.empty(n, dtype=np.int64)
    pe_arr = np.empty(m, dtype=np.int64)
    cdef long long[::1] rem_s = rem_s_arr
    cdef long long[::1] rem_d = rem_d_arr
    cdef long long[:, ::1] flow = flow_arr
    cdef double[::1] D = D_arr
    cdef double[::1] E = E_arr
    cdef long long[::1] pd = pd_arr
    cdef long long[::1] pe = pe_arr
    for i in range(n):
        total += rem_s[i]
        for j in range(m):
            if abs(cost[i, j]) > cmax:
                cmax = abs(cost[i, j])
    eps = 1e-12 * (1.0 + cmax)
    while total > 0:
        for i in range(n):
            D[i] = 0.0 if rem_s[i] > 0 else INFINITY
            pd[i] = -1
        for j in range(m):
            E[j] = INFINITY
            pe[j] = -1
        for rnd in range(n + m + 1):
            changed = False
            for j in range(m):
                for i in range(n):
                    if D[i] < INFINITY:
                        v = D[i] + cost[i, j]
                        if v < E[j] - eps:
                            E[j] = v
                            pe[j] = i
                            changed = True
            for i in range(n):
                for j in range(m):
                    if flow[i, j] > 0 and E[j] < INFINITY:
                        v = E[j] - cost[i, j]
                        if v < D[i] - eps:
                            D[i] = v
                            pd[i] = j
                            changed = True
            if not changed:
                break
        jb = -1
        for j in range(m):
            if rem_d[j] > 0 and E[j] < INFINITY and (jb < 0 or E[j] < E[jb]):
                jb = j
        if jb < 0:
            raise RuntimeError("no augmenting path; supplies and demands unbalanced")
        push = rem_d[jb]
        j = jb
        while True:
            i = pe[j]
            if pd[i] < 0:
                if rem_s[i] < push:
                    push = rem_s[i]
                break
            j = pd[i]
            if flow[i, j] < push:
                push = flow[i, j]
        j = jb
        while True:
            i = pe[j]
            flow[i, j] += push
            if pd[i] < 0:
                rem_s[i] -= push
                break
            j = pd[i]
            flow[i, j] -= push
        rem_d[jb] -= push
        total -= push
    return flow_arr
