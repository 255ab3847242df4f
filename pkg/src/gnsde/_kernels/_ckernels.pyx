# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: CSR propagation and counter-based random bits."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()


cdef inline uint64_t _splitmix(uint64_t z) nogil:
    z = z + <uint64_t>0x9E3779B97F4A7C15ULL
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


def csr_matmul(const int64_t[::1] indptr, const int64_t[::1] indices,
               const double[::1] values, const double[:, ::1] x):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = x.shape[1]
    out = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, k, c, j
    cdef double v
    with nogil:
        for i in range(n):
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                v = values[k]
                for c in range(d):
                    o[i, c] = o[i, c] + v * x[j, c]
    return out


def counter_bits(uint64_t seed, uint64_t start, Py_ssize_t count):
    out = np.empty(count, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    cdef uint64_t key = _splitmix(seed)
    cdef Py_ssize_t k
    with nogil:
        for k in range(count):
            o[k] = _splitmix(key ^ ((start + <uint64_t>k) * <uint64_t>0xD1B54A32D192ED03ULL))
    return out
