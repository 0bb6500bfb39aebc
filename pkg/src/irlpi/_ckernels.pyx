# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled monomial-basis kernels (see ``_pykernels`` for the reference)."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef void _fill_powers(const double[::1] x, double[:, ::1] pw, Py_ssize_t max_deg) noexcept nogil:
    cdef Py_ssize_t k, p
    for k in range(x.shape[0]):
        pw[k, 0] = 1.0
        for p in range(1, max_deg + 1):
            pw[k, p] = pw[k, p - 1] * x[k]


def basis_values(X, E):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const long long[:, ::1] Ev = np.ascontiguousarray(E, dtype=np.int64)
    cdef Py_ssize_t B = Xv.shape[0], d = Xv.shape[1], M = Ev.shape[0]
    cdef Py_ssize_t max_deg = int(np.max(E, initial=0))
    out = np.empty((B, M))
    cdef double[:, ::1] ov = out
    cdef double[:, ::1] pw = np.empty((d, max_deg + 1))
    cdef Py_ssize_t b, j, k
    cdef double acc
    with nogil:
        for b in range(B):
            _fill_powers(Xv[b], pw, max_deg)
            for j in range(M):
                acc = 1.0
                for k in range(d):
                    acc = acc * pw[k, Ev[j, k]]
                ov[b, j] = acc
    return out


def basis_jacobian(X, E):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const long long[:, ::1] Ev = np.ascontiguousarray(E, dtype=np.int64)
    cdef Py_ssize_t B = Xv.shape[0], d = Xv.shape[1], M = Ev.shape[0]
    cdef Py_ssize_t max_deg = int(np.max(E, initial=0))
    out = np.empty((B, M, d))
    cdef double[:, :, ::1] ov = out
    cdef double[:, ::1] pw = np.empty((d, max_deg + 1))
    cdef Py_ssize_t b, j, k, l
    cdef long long e
    cdef double acc
    with nogil:
        for b in range(B):
            _fill_powers(Xv[b], pw, max_deg)
            for j in range(M):
                for k in range(d):
                    e = Ev[j, k]
                    if e == 0:
                        ov[b, j, k] = 0.0
                        continue
                    acc = e * pw[k, e - 1]
                    for l in range(d):
                        if l != k:
                            acc = acc * pw[l, Ev[j, l]]
                    ov[b, j, k] = acc
    return out


def value_and_gradient(X, E, w):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const long long[:, ::1] Ev = np.ascontiguousarray(E, dtype=np.int64)
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t B = Xv.shape[0], d = Xv.shape[1], M = Ev.shape[0]
    cdef Py_ssize_t max_deg = int(np.max(E, initial=0))
    val = np.zeros(B)
    grad = np.zeros((B, d))
    cdef double[::1] vv = val
    cdef double[:, ::1] gv = grad
    cdef double[:, ::1] pw = np.empty((d, max_deg + 1))
    cdef Py_ssize_t b, j, k, l
    cdef long long e
    cdef double acc
    with nogil:
        for b in range(B):
            _fill_powers(Xv[b], pw, max_deg)
            for j in range(M):
                acc = 1.0
                for k in range(d):
                    acc = acc * pw[k, Ev[j, k]]
                vv[b] += wv[j] * acc
                for k in range(d):
                    e = Ev[j, k]
                    if e == 0:
                        continue
                    acc = e * pw[k, e - 1]
                    for l in range(d):
                        if l != k:
                            acc = acc * pw[l, Ev[j, l]]
                    gv[b, k] += wv[j] * acc
    return val, grad
