# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot reductions in :mod:`mflpaths._pykernels`.

Rows are distributed over OpenMP threads; every row is reduced sequentially,
so results do not depend on the thread count.
"""
import numpy as np

from cython.parallel cimport prange
from libc.math cimport exp, fabs, log, sqrt, INFINITY


def sqdist(const double[:, ::1] X, const double[:, ::1] Y, int num_threads=1):
    cdef Py_ssize_t n = X.shape[0], k = Y.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, l
    cdef double s, diff
    out = np.empty((n, k))
    cdef double[:, ::1] o = out
    for i in prange(n, nogil=True, num_threads=num_threads, schedule="static"):
        for j in range(k):
            s = 0.0
            for l in range(d):
                diff = X[i, l] - Y[j, l]
                s = s + diff * diff
            o[i, j] = s
    return out


def lse_rows(const double[:, ::1] C, const double[::1] f, const double[::1] logw,
             double tau, int num_threads=1):
    cdef Py_ssize_t n = C.shape[0], k = C.shape[1]
    cdef Py_ssize_t i, j
    cdef double mx, a, s
    cdef double inv = 1.0 / tau
    out = np.empty(n)
    cdef double[::1] o = out
    for i in prange(n, nogil=True, num_threads=num_threads, schedule="static"):
        mx = -INFINITY
        for j in range(k):
            a = (f[j] - C[i, j]) * inv + logw[j]
            if a > mx:
                mx = a
        if mx == -INFINITY:
            o[i] = -INFINITY
        else:
            s = 0.0
            for j in range(k):
                s = s + exp((f[j] - C[i, j]) * inv + logw[j] - mx)
            o[i] = mx + log(s)
    return out


def softmin_grad(const double[:, ::1] X, const double[:, ::1] Y, const double[:, ::1] C,
                 const double[::1] f, const double[::1] logw, double tau, int num_threads=1):
    cdef Py_ssize_t n = X.shape[0], k = Y.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, l
    cdef double mx, a, s, w
    cdef double inv = 1.0 / tau
    lse = np.empty(n)
    grad = np.zeros((n, d))
    cdef double[::1] lo = lse
    cdef double[:, ::1] g = grad
    for i in prange(n, nogil=True, num_threads=num_threads, schedule="static"):
        mx = -INFINITY
        for j in range(k):
            a = (f[j] - C[i, j]) * inv + logw[j]
            if a > mx:
                mx = a
        s = 0.0
        for j in range(k):
            s = s + exp((f[j] - C[i, j]) * inv + logw[j] - mx)
        lo[i] = mx + log(s)
        for j in range(k):
            w = exp((f[j] - C[i, j]) * inv + logw[j] - lo[i])
            for l in range(d):
                g[i, l] = g[i, l] + w * (X[i, l] - Y[j, l])
    return lse, grad


def pair_dist_sum(const double[:, ::1] X, const double[::1] wx,
                  const double[:, ::1] Y, const double[::1] wy, int num_threads=1):
    cdef Py_ssize_t n = X.shape[0], k = Y.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, l
    cdef double s, r, diff
    rows = np.empty(n)
    cdef double[::1] ro = rows
    for i in prange(n, nogil=True, num_threads=num_threads, schedule="static"):
        s = 0.0
        for j in range(k):
            r = 0.0
            for l in range(d):
                diff = X[i, l] - Y[j, l]
                r = r + diff * diff
            s = s + wy[j] * sqrt(r)
        ro[i] = wx[i] * s
    cdef double total = 0.0
    for i in range(n):
        total += ro[i]
    return total


cdef inline double _dot(const double* a, const double* b, Py_ssize_t n) noexcept nogil:
    # four independent partial sums; fixed order keeps results reproducible
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t i = 0
    while i + 4 <= n:
        s0 = s0 + a[i] * b[i]
        s1 = s1 + a[i + 1] * b[i + 1]
        s2 = s2 + a[i + 2] * b[i + 2]
        s3 = s3 + a[i + 3] * b[i + 3]
        i += 4
    while i < n:
        s0 = s0 + a[i] * b[i]
        i += 1
    return (s0 + s1) + (s2 + s3)


def scaling_iterations(const double[:, ::1] Kq, const double[:, ::1] KpT, double[::1] s,
                       double[::1] la, double[::1] lb, const double[::1] ca, const double[::1] cb,
                       const double[::1] p, const double[::1] u0, double damp, double tau,
                       double inv_rho, double tol, long max_iter, double absorb):
    cdef Py_ssize_t n = Kq.shape[0], k = Kq.shape[1], i, j
    cdef long it = 0
    cdef double acc, viol, big
    cdef int status = 3
    ea_arr = np.empty(n)
    eb_arr = np.empty(k)
    cdef double[::1] ea = ea_arr
    cdef double[::1] eb = eb_arr
    with nogil:
        while it < max_iter:
            it += 1
            big = 0.0
            for i in range(n):
                if p[i] > 0:
                    la[i] = -damp * log(s[i]) - ca[i]
                else:
                    la[i] = 0.0
                ea[i] = exp(la[i])
                if fabs(la[i]) > big:
                    big = fabs(la[i])
            for j in range(k):
                acc = _dot(&KpT[j, 0], &ea[0], n)
                lb[j] = -damp * log(acc) - cb[j]
                eb[j] = exp(lb[j])
                if fabs(lb[j]) > big:
                    big = fabs(lb[j])
            viol = 0.0
            for i in range(n):
                acc = _dot(&Kq[i, 0], &eb[0], k)
                s[i] = acc
                if p[i] > 0:
                    if inv_rho == 0.0:
                        viol = viol + fabs(p[i] * ea[i] * acc - p[i])
                    else:
                        viol = viol + fabs(p[i] * ea[i] * acc - p[i] * exp(-(u0[i] + tau * la[i]) * inv_rho))
            if not (big < INFINITY and viol < INFINITY):
                status = 2
                break
            if viol <= tol:
                status = 0
                break
            if big > absorb:
                status = 1
                break
    return status, it
