# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. Mirrors ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def simulate_lti(Ad, Bd, C, D, z0, w):
    cdef const double[:, ::1] ad = np.ascontiguousarray(Ad, dtype=np.float64)
    cdef const double[:, ::1] bd = np.ascontiguousarray(Bd, dtype=np.float64)
    cdef const double[:, ::1] c = np.ascontiguousarray(C, dtype=np.float64)
    cdef const double[:, ::1] d = np.ascontiguousarray(D, dtype=np.float64)
    cdef const double[:, ::1] ww = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t n = ad.shape[0], q = bd.shape[1], m = c.shape[0]
    cdef Py_ssize_t steps = ww.shape[0]
    Y_arr = np.empty((steps, m))
    cdef double[:, ::1] Y = Y_arr
    z_arr = np.array(z0, dtype=np.float64)
    znew_arr = np.empty(n)
    cdef double[::1] z = z_arr
    cdef double[::1] zn = znew_arr
    cdef Py_ssize_t l, i, j
    cdef double acc
    for l in range(steps):
        for i in range(m):
            acc = 0.0
            for j in range(n):
                acc += c[i, j] * z[j]
            for j in range(q):
                acc += d[i, j] * ww[l, j]
            Y[l, i] = acc
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += ad[i, j] * z[j]
            for j in range(q):
                acc += bd[i, j] * ww[l, j]
            zn[i] = acc
        for i in range(n):
            z[i] = zn[i]
    return Y_arr, z_arr


def propagate(Ad, Bd, z0, w):
    cdef const double[:, ::1] ad = np.ascontiguousarray(Ad, dtype=np.float64)
    cdef const double[:, ::1] bd = np.ascontiguousarray(Bd, dtype=np.float64)
    cdef const double[:, ::1] ww = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t n = ad.shape[0], q = bd.shape[1], steps = ww.shape[0]
    z_arr = np.array(z0, dtype=np.float64)
    cdef double[::1] z = z_arr
    cdef double[::1] zn = np.empty(n)
    cdef Py_ssize_t l, i, j
    cdef double acc
    for l in range(steps):
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += ad[i, j] * z[j]
            for j in range(q):
                acc += bd[i, j] * ww[l, j]
            zn[i] = acc
        for i in range(n):
            z[i] = zn[i]
    return z_arr


cdef double _sse(const double[:, ::1] forced, const double[:, :, ::1] free, const double[::1] x0,
                 const double[::1] y, Py_ssize_t c, Py_ssize_t L) nogil:
    cdef Py_ssize_t i, j, n = x0.shape[0]
    cdef double acc, pred, diff
    acc = 0.0
    for i in range(L):
        pred = forced[c, i]
        for j in range(n):
            pred += free[c, i, j] * x0[j]
        diff = y[i] - pred
        acc += diff * diff
    return acc


def residual_scan(forced, free, x0, measured, candidates, length):
    cdef const double[:, ::1] f = np.ascontiguousarray(forced, dtype=np.float64)
    cdef const double[:, :, ::1] fr = np.ascontiguousarray(free, dtype=np.float64)
    cdef const double[::1] x = np.ascontiguousarray(x0, dtype=np.float64)
    cdef const double[::1] y = np.ascontiguousarray(measured, dtype=np.float64)
    cdef const long[::1] cand = np.ascontiguousarray(candidates, dtype=np.int_)
    cdef Py_ssize_t L = length, k, best = -1
    cdef double res, best_res = np.inf
    with nogil:
        for k in range(cand.shape[0]):
            res = _sse(f, fr, x, y, cand[k], L)
            if res < best_res:
                best_res = res
                best = k
    return best, best_res


def residuals_all(forced, free, x0, measured, candidates, length):
    cdef const double[:, ::1] f = np.ascontiguousarray(forced, dtype=np.float64)
    cdef const double[:, :, ::1] fr = np.ascontiguousarray(free, dtype=np.float64)
    cdef const double[::1] x = np.ascontiguousarray(x0, dtype=np.float64)
    cdef const double[::1] y = np.ascontiguousarray(measured, dtype=np.float64)
    cdef const long[::1] cand = np.ascontiguousarray(candidates, dtype=np.int_)
    out_arr = np.empty(cand.shape[0])
    cdef double[::1] out = out_arr
    cdef Py_ssize_t L = length, k
    with nogil:
        for k in range(cand.shape[0]):
            out[k] = _sse(f, fr, x, y, cand[k], L)
    return out_arr


def sq_distances(points, x):
    cdef const double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[::1] q = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t N = p.shape[0], d = p.shape[1], i, j
    out_arr = np.empty(N)
    cdef double[::1] out = out_arr
    cdef double acc, diff
    with nogil:
        for i in range(N):
            acc = 0.0
            for j in range(d):
                diff = p[i, j] - q[j]
                acc += diff * diff
            out[i] = acc
    return out_arr
