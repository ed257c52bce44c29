# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_pykernels`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()


def adam_update(double[::1] p, const double[::1] g, double[::1] m, double[::1] v,
                double lr, double beta1, double beta2, double eps,
                double bc1, double bc2):
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double gi, step = lr / bc1
    with nogil:
        for i in range(n):
            gi = g[i]
            m[i] = m[i] * beta1 + (1.0 - beta1) * gi
            v[i] = v[i] * beta2 + (1.0 - beta2) * (gi * gi)
            p[i] = p[i] - step * m[i] / (sqrt(v[i] / bc2) + eps)


def relu_forward(x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(arr)
    cdef const double[::1] xv = arr.reshape(-1)
    cdef double[::1] ov = out.reshape(-1)
    cdef Py_ssize_t i, n = xv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = xv[i] if xv[i] > 0.0 else 0.0
    return out


def relu_backward(g, x):
    garr = np.ascontiguousarray(np.broadcast_to(g, np.shape(x)), dtype=np.float64)
    xarr = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(xarr)
    cdef const double[::1] gv = garr.reshape(-1)
    cdef const double[::1] xv = xarr.reshape(-1)
    cdef double[::1] ov = out.reshape(-1)
    cdef const double* gp = &gv[0]
    cdef const double* xp = &xv[0]
    cdef double* op = &ov[0]
    cdef double mask
    cdef Py_ssize_t i, n = xv.shape[0]
    with nogil:
        for i in range(n):
            # multiply by an explicit 0/1 mask: a branch mispredicts on random signs
            mask = <double>(xp[i] > 0.0)
            op[i] = gp[i] * mask
    return out


cdef double _block_sum(const double[:, ::1] a, const double[:, ::1] b,
                       double gamma, bint skip_diagonal) noexcept nogil:
    cdef Py_ssize_t i, j, k, n = a.shape[0], m = b.shape[0], d = a.shape[1]
    cdef double total = 0.0, row, dist, diff
    for i in range(n):
        row = 0.0
        for j in range(m):
            if skip_diagonal and i == j:
                continue
            dist = 0.0
            for k in range(d):
                diff = a[i, k] - b[j, k]
                dist = dist + diff * diff
            row = row + exp(-gamma * dist)
        total = total + row
    return total


def rbf_kernel_sums(x, y, double gamma):
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double sxx, syy, sxy
    with nogil:
        sxx = _block_sum(xv, xv, gamma, True)
        syy = _block_sum(yv, yv, gamma, True)
        sxy = _block_sum(xv, yv, gamma, False)
    return sxx, syy, sxy


def nearest_center(samples, centers):
    s_arr = np.ascontiguousarray(samples, dtype=np.float64)
    if s_arr.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    cdef const double[:, ::1] s = s_arr
    cdef const double[:, ::1] c = np.ascontiguousarray(centers, dtype=np.float64)
    out = np.empty(s.shape[0], dtype=np.int64)
    cdef cnp.int64_t[::1] ov = out
    cdef Py_ssize_t i, j, k, best
    cdef double dist, best_dist, diff
    with nogil:
        for i in range(s.shape[0]):
            best = 0
            best_dist = -1.0
            for j in range(c.shape[0]):
                dist = 0.0
                for k in range(s.shape[1]):
                    diff = s[i, k] - c[j, k]
                    dist = dist + diff * diff
                if best_dist < 0.0 or dist < best_dist:
                    best_dist = dist
                    best = j
            ov[i] = best
    return out
