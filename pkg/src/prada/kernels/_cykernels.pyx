# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled numeric kernels: row pooling, bilinear scoring, cosine scans and
hinge accumulation. Contracts match ``_pykernels``; float64 C-contiguous
arrays only."""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def mean_rows(double[:, ::1] mat, cnp.intp_t[::1] idx):
    cdef Py_ssize_t n = idx.shape[0]
    cdef Py_ssize_t d = mat.shape[1]
    cdef Py_ssize_t i, j, r
    if n == 0:
        raise ValueError("mean_rows: empty index list")
    out_arr = np.zeros(d, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        r = idx[i]
        for j in range(d):
            out[j] += mat[r, j]
    for j in range(d):
        out[j] /= n
    return out_arr


def matvec(double[:, ::1] mat, double[::1] v):
    cdef Py_ssize_t n = mat.shape[0]
    cdef Py_ssize_t d = mat.shape[1]
    cdef Py_ssize_t i, j
    cdef double acc
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        acc = 0.0
        for j in range(d):
            acc += mat[i, j] * v[j]
        out[i] = acc
    return out_arr


def bilinear_score(double[::1] q, double[:, ::1] w, double[::1] d):
    cdef Py_ssize_t dim = w.shape[0]
    cdef Py_ssize_t i, j
    cdef double acc = 0.0
    cdef double row
    for i in range(dim):
        row = 0.0
        for j in range(dim):
            row += w[i, j] * d[j]
        acc += q[i] * row
    return acc


def cosine_scores(double[:, ::1] mat, double[::1] norms, double[::1] v):
    cdef Py_ssize_t n = mat.shape[0]
    cdef Py_ssize_t d = mat.shape[1]
    cdef Py_ssize_t i, j
    cdef double vnorm = 0.0
    cdef double dot
    for j in range(d):
        vnorm += v[j] * v[j]
    vnorm = sqrt(vnorm)
    if vnorm == 0.0:
        raise ValueError("cosine_scores: zero-norm query vector")
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        if norms[i] == 0.0:
            out[i] = -2.0
            continue
        dot = 0.0
        for j in range(d):
            dot += mat[i, j] * v[j]
        out[i] = dot / (norms[i] * vnorm)
    return out_arr


def hinge_total(double adv_score, double[::1] others, double beta):
    cdef Py_ssize_t n = others.shape[0]
    cdef Py_ssize_t i
    cdef double loss = 0.0
    cdef double m
    cdef Py_ssize_t active = 0
    for i in range(n):
        m = beta - adv_score + others[i]
        if m > 0.0:
            loss += m
            active += 1
    return loss, active
