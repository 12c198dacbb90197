# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled scan kernel: sequential threshold-crossing detection.

Same contract as the numpy fallback in ``_pykernels``; see there for the
parameter documentation.
"""

from libc.math cimport fabs


def scan_crossings(double[:, ::1] values, double[::1] level, double threshold,
                   signed char[:, ::1] signs, long long[:, ::1] idx,
                   long long[::1] found, long long index_offset=0):
    cdef Py_ssize_t P = values.shape[0]
    cdef Py_ssize_t L = values.shape[1]
    cdef Py_ssize_t n_target = signs.shape[1]
    cdef Py_ssize_t p, j
    cdef long long k
    cdef double lev, v

    with nogil:
        for p in range(P):
            k = found[p]
            if k >= n_target:
                continue
            lev = level[p]
            for j in range(L):
                v = values[p, j]
                if fabs(v - lev) >= threshold:
                    signs[p, k] = 1 if v > lev else -1
                    idx[p, k] = index_offset + j
                    lev = v
                    k += 1
                    if k >= n_target:
                        break
            found[p] = k
            level[p] = lev
