# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Sparse neighbour aggregation kernels over the CSR adjacency.

Slots whose row or neighbour is dead (``alive == 0``) are skipped, so a
removed entity neither receives nor sends messages.
"""
cimport numpy as cnp
from libc.math cimport exp

ctypedef cnp.int64_t idx_t


def spmm(const idx_t[::1] indptr, const idx_t[::1] nbr, const double[::1] w,
         const unsigned char[::1] alive, const double[:, ::1] x, double[:, ::1] out):
    """out[i] = sum_s w[s] * x[nbr[s]] over live slots of row i."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t m = x.shape[1]
    cdef Py_ssize_t i, s, j, t
    cdef double wt
    with nogil:
        for i in range(n):
            for j in range(m):
                out[i, j] = 0.0
            if not alive[i]:
                continue
            for s in range(indptr[i], indptr[i + 1]):
                t = nbr[s]
                if not alive[t]:
                    continue
                wt = w[s]
                for j in range(m):
                    out[i, j] += wt * x[t, j]


def spmm_t(const idx_t[::1] indptr, const idx_t[::1] nbr, const double[::1] w,
           const unsigned char[::1] alive, const double[:, ::1] g, double[:, ::1] out):
    """Transpose of :func:`spmm`: out[nbr[s]] += w[s] * g[i] over live slots."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t m = g.shape[1]
    cdef Py_ssize_t i, s, j, t
    cdef double wt
    with nogil:
        for i in range(out.shape[0]):
            for j in range(m):
                out[i, j] = 0.0
        for i in range(n):
            if not alive[i]:
                continue
            for s in range(indptr[i], indptr[i + 1]):
                t = nbr[s]
                if not alive[t]:
                    continue
                wt = w[s]
                for j in range(m):
                    out[t, j] += wt * g[i, j]


def row_softmax(const idx_t[::1] indptr, const idx_t[::1] nbr, const double[::1] alpha,
                const unsigned char[::1] alive, double[::1] out):
    """Per-row softmax of ``alpha`` over live slots; dead slots get 0."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t i, s
    cdef double mx, tot
    cdef int any_live
    with nogil:
        for i in range(n):
            any_live = 0
            mx = 0.0
            for s in range(indptr[i], indptr[i + 1]):
                out[s] = 0.0
                if alive[i] and alive[nbr[s]]:
                    if not any_live or alpha[s] > mx:
                        mx = alpha[s]
                    any_live = 1
            if not any_live:
                continue
            tot = 0.0
            for s in range(indptr[i], indptr[i + 1]):
                if alive[nbr[s]]:
                    out[s] = exp(alpha[s] - mx)
                    tot += out[s]
            for s in range(indptr[i], indptr[i + 1]):
                out[s] = out[s] / tot
