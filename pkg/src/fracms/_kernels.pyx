# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled element scatter kernels; see ``fracms._kernels_py`` for the reference versions."""
import numpy as np

cimport numpy as cnp

cnp.import_array()


def scatter_add(const cnp.int64_t[:, ::1] slots, const double[::1] coef,
                const double[:, ::1] local, Py_ssize_t nnz):
    cdef Py_ssize_t n = slots.shape[0], k = slots.shape[1], e, j
    cdef double c
    out = np.zeros(nnz, dtype=np.float64)
    cdef double[::1] o = out
    for e in range(n):
        c = coef[e]
        for j in range(k):
            o[slots[e, j]] += c * local[e, j]
    return out


def element_average(const cnp.int64_t[:, ::1] conn, const double[::1] values):
    cdef Py_ssize_t n = conn.shape[0], k = conn.shape[1], e, j
    cdef double s, inv = 1.0 / k
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for e in range(n):
        s = 0.0
        for j in range(k):
            s += values[conn[e, j]]
        o[e] = s * inv
    return out
