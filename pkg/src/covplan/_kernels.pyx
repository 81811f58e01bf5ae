# cython: language_level=3
"""Compiled hot kernels: 3x3 im2col/col2im and sum-tree update/descent."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col3x3(const double[:, :, :, ::1] x):
    cdef Py_ssize_t b = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    out_arr = np.zeros((b, h, w, 9 * c), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, r, q, di, dj, rr, qq, ch, k
    for n in range(b):
        for r in range(h):
            for q in range(w):
                k = 0
                for di in range(3):
                    rr = r + di - 1
                    for dj in range(3):
                        qq = q + dj - 1
                        if 0 <= rr < h and 0 <= qq < w:
                            for ch in range(c):
                                out[n, r, q, k + ch] = x[n, rr, qq, ch]
                        k += c
    return out_arr


def col2im3x3(const double[:, :, :, ::1] cols, Py_ssize_t channels):
    cdef Py_ssize_t b = cols.shape[0], h = cols.shape[1], w = cols.shape[2]
    cdef Py_ssize_t c = channels
    out_arr = np.zeros((b, h, w, c), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, r, q, di, dj, rr, qq, ch, k
    for n in range(b):
        for r in range(h):
            for q in range(w):
                k = 0
                for di in range(3):
                    rr = r + di - 1
                    for dj in range(3):
                        qq = q + dj - 1
                        if 0 <= rr < h and 0 <= qq < w:
                            for ch in range(c):
                                out[n, rr, qq, ch] += cols[n, r, q, k + ch]
                        k += c
    return out_arr


def sumtree_set(double[::1] tree, const cnp.int64_t[::1] leaves, const double[::1] values):
    cdef Py_ssize_t size = tree.shape[0] // 2
    cdef Py_ssize_t n, i
    for n in range(leaves.shape[0]):
        i = size + leaves[n]
        tree[i] = values[n]
        i //= 2
        while i >= 1:
            tree[i] = tree[2 * i] + tree[2 * i + 1]
            i //= 2


def sumtree_find(const double[::1] tree, const double[::1] targets):
    cdef Py_ssize_t size = tree.shape[0] // 2
    out_arr = np.empty(targets.shape[0], dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    cdef Py_ssize_t n, i, left
    cdef double u
    for n in range(targets.shape[0]):
        u = targets[n]
        i = 1
        while i < size:
            left = 2 * i
            if (u < tree[left] and tree[left] > 0.0) or tree[left + 1] <= 0.0:
                i = left
            else:
                u -= tree[left]
                i = left + 1
        out[n] = i - size
    return out_arr
