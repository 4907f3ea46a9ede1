# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Results agree with ``_kernels_py`` up to summation order."""
from math import comb

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline int _popcount(Py_ssize_t x) nogil:
    cdef int c = 0
    while x:
        x &= x - 1
        c += 1
    return c


def shapley_from_table(const double[:, ::1] table, int n_players, bint normalize):
    cdef Py_ssize_t n_sub = table.shape[0]
    cdef Py_ssize_t n_cls = table.shape[1]
    if n_sub != (<Py_ssize_t>1 << n_players):
        raise ValueError("table must have 2**n_players rows")
    out_arr = np.zeros((n_players, n_cls), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] weight = np.empty(max(n_players, 1), dtype=np.float64)
    cdef Py_ssize_t s, i, mask, bit, c
    cdef double w
    for s in range(n_players):
        weight[s] = 1.0 / comb(n_players - 1, s)
        if normalize:
            weight[s] /= n_players
    with nogil:
        for i in range(n_players):
            bit = (<Py_ssize_t>1) << i
            for mask in range(n_sub):
                if mask & bit:
                    continue
                w = weight[_popcount(mask)]
                for c in range(n_cls):
                    out[i, c] += w * (table[mask | bit, c] - table[mask, c])
    return out_arr


def confusion_from_scores(const double[:, ::1] scores, const cnp.int64_t[::1] labels, int n_classes):
    cdef Py_ssize_t m = scores.shape[0]
    cdef Py_ssize_t k = scores.shape[1]
    if labels.shape[0] != m:
        raise ValueError("scores and labels disagree on sample count")
    if k != n_classes:
        raise ValueError("score width must equal n_classes")
    out_arr = np.zeros((n_classes, n_classes), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    cdef Py_ssize_t r, j, best
    cdef cnp.int64_t y
    cdef double top
    for r in range(m):
        y = labels[r]
        if y < 0 or y >= n_classes:
            raise ValueError(f"label {y} outside [0, {n_classes})")
        best = 0
        top = scores[r, 0]
        for j in range(1, k):
            if scores[r, j] > top:
                top = scores[r, j]
                best = j
        out[y, best] += 1
    return out_arr
