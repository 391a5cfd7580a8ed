# cython: language_level=3
"""Compiled hot kernels: Philox4x32-10 streams and row log-sum-exp.

Same contracts as ``_kernels_py``; loops run without the GIL so the
particle-block thread pool gets real parallelism.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log, sqrt, cos, sin, exp, isfinite, M_PI
from libc.stdint cimport uint32_t, uint64_t

cnp.import_array()

cdef uint64_t M0 = 0xD2511F53
cdef uint64_t M1 = 0xCD9E8D57
cdef uint32_t W0 = 0x9E3779B9
cdef uint32_t W1 = 0xBB67AE85


cdef inline void _philox(uint32_t* c, uint32_t k0, uint32_t k1) noexcept nogil:
    cdef uint64_t p0, p1
    cdef uint32_t x0, x1, x2, x3
    cdef int r
    for r in range(10):
        if r:
            k0 = k0 + W0
            k1 = k1 + W1
        p0 = M0 * <uint64_t>c[0]
        p1 = M1 * <uint64_t>c[2]
        x0 = <uint32_t>(p1 >> 32) ^ c[1] ^ k0
        x1 = <uint32_t>p1
        x2 = <uint32_t>(p0 >> 32) ^ c[3] ^ k1
        x3 = <uint32_t>p0
        c[0] = x0
        c[1] = x1
        c[2] = x2
        c[3] = x3


cdef inline double _unit(uint32_t hi, uint32_t lo) noexcept nogil:
    return (<double>(hi >> 5) * 67108864.0 + <double>(lo >> 6) + 0.5) * 1.1102230246251565e-16


def philox4x32(k0, k1, c0, c1, c2, c3):
    cdef const uint32_t[::1] vk0 = np.ascontiguousarray(k0, dtype=np.uint32)
    cdef const uint32_t[::1] vk1 = np.ascontiguousarray(k1, dtype=np.uint32)
    cdef const uint32_t[::1] v0 = np.ascontiguousarray(c0, dtype=np.uint32)
    cdef const uint32_t[::1] v1 = np.ascontiguousarray(c1, dtype=np.uint32)
    cdef const uint32_t[::1] v2 = np.ascontiguousarray(c2, dtype=np.uint32)
    cdef const uint32_t[::1] v3 = np.ascontiguousarray(c3, dtype=np.uint32)
    cdef Py_ssize_t n = v0.shape[0], i
    out = np.empty((n, 4), dtype=np.uint32)
    cdef uint32_t[:, ::1] vo = out
    cdef uint32_t c[4]
    with nogil:
        for i in range(n):
            c[0] = v0[i]
            c[1] = v1[i]
            c[2] = v2[i]
            c[3] = v3[i]
            _philox(c, vk0[i], vk1[i])
            vo[i, 0] = c[0]
            vo[i, 1] = c[1]
            vo[i, 2] = c[2]
            vo[i, 3] = c[3]
    return out


def normals(k0, k1, c0, c1, c2, int ncomp):
    cdef const uint32_t[::1] vk0 = np.ascontiguousarray(k0, dtype=np.uint32)
    cdef const uint32_t[::1] vk1 = np.ascontiguousarray(k1, dtype=np.uint32)
    cdef const uint32_t[::1] v0 = np.ascontiguousarray(c0, dtype=np.uint32)
    cdef const uint32_t[::1] v1 = np.ascontiguousarray(c1, dtype=np.uint32)
    cdef const uint32_t[::1] v2 = np.ascontiguousarray(c2, dtype=np.uint32)
    cdef Py_ssize_t n = v0.shape[0], i
    cdef int j
    out = np.empty((n, ncomp), dtype=np.float64)
    cdef double[:, ::1] vo = out
    cdef uint32_t c[4]
    cdef double u, v, r
    with nogil:
        for i in range(n):
            j = 0
            while j < ncomp:
                c[0] = v0[i]
                c[1] = v1[i]
                c[2] = v2[i]
                c[3] = <uint32_t>(j // 2)
                _philox(c, vk0[i], vk1[i])
                u = _unit(c[0], c[1])
                v = _unit(c[2], c[3])
                r = sqrt(-2.0 * log(u))
                vo[i, j] = r * cos(2.0 * M_PI * v)
                if j + 1 < ncomp:
                    vo[i, j + 1] = r * sin(2.0 * M_PI * v)
                j += 2
    return out


def uniforms(k0, k1, c0, c1, c2):
    cdef const uint32_t[::1] vk0 = np.ascontiguousarray(k0, dtype=np.uint32)
    cdef const uint32_t[::1] vk1 = np.ascontiguousarray(k1, dtype=np.uint32)
    cdef const uint32_t[::1] v0 = np.ascontiguousarray(c0, dtype=np.uint32)
    cdef const uint32_t[::1] v1 = np.ascontiguousarray(c1, dtype=np.uint32)
    cdef const uint32_t[::1] v2 = np.ascontiguousarray(c2, dtype=np.uint32)
    cdef Py_ssize_t n = v0.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] vo = out
    cdef uint32_t c[4]
    with nogil:
        for i in range(n):
            c[0] = v0[i]
            c[1] = v1[i]
            c[2] = v2[i]
            c[3] = 0
            _philox(c, vk0[i], vk1[i])
            vo[i] = _unit(c[0], c[1])
    return out


cdef double _pairwise(const double* x, Py_ssize_t n, double shift) noexcept nogil:
    cdef Py_ssize_t i, half
    cdef double s
    if n <= 16:
        s = 0.0
        for i in range(n):
            s += exp(x[i] - shift)
        return s
    half = n // 2
    return _pairwise(x, half, shift) + _pairwise(x + half, n - half, shift)


def logsumexp_rows(a):
    cdef const double[:, ::1] va = np.ascontiguousarray(a, dtype=np.float64)
    cdef Py_ssize_t rows = va.shape[0], cols = va.shape[1], i, j
    out = np.empty(rows, dtype=np.float64)
    cdef double[::1] vo = out
    cdef double m
    with nogil:
        for i in range(rows):
            m = -1.0 / 0.0
            for j in range(cols):
                if va[i, j] > m:
                    m = va[i, j]
            if not isfinite(m):
                m = 0.0
            vo[i] = m + log(_pairwise(&va[i, 0], cols, m))
    return out
