# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled segment kernels.

Same accumulation order as the numpy fallback (ascending row index), so
both backends produce bitwise-identical results.
"""

NAME = "compiled"


def add_rows_at(double[:, ::1] out, long long[::1] idx, double[:, ::1] rows):
    cdef Py_ssize_t e, c
    cdef Py_ssize_t n_rows = rows.shape[0]
    cdef Py_ssize_t n_cols = rows.shape[1]
    cdef Py_ssize_t t
    for e in range(n_rows):
        t = idx[e]
        for c in range(n_cols):
            out[t, c] += rows[e, c]


def max_rows_at(double[:, ::1] out, long long[::1] idx, double[:, ::1] rows):
    cdef Py_ssize_t e, c
    cdef Py_ssize_t n_rows = rows.shape[0]
    cdef Py_ssize_t n_cols = rows.shape[1]
    cdef Py_ssize_t t
    cdef double v
    for e in range(n_rows):
        t = idx[e]
        for c in range(n_cols):
            v = rows[e, c]
            if v > out[t, c]:
                out[t, c] = v
