# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for conv patch extraction and 2x2 max pooling.

Semantics match cyclefed.kernels.numpy_backend exactly (same patch layout,
same first-maximum tie break), so the two back ends are interchangeable.
"""

import numpy as np

cimport numpy as cnp

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, int kh, int kw):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t h = x.shape[1]
    cdef Py_ssize_t w = x.shape[2]
    cdef Py_ssize_t c = x.shape[3]
    cdef Py_ssize_t oh = h - kh + 1
    cdef Py_ssize_t ow = w - kw + 1
    out_np = np.empty((n, oh, ow, kh * kw * c), dtype=np.asarray(x).dtype)
    cdef real[:, :, :, ::1] out = out_np
    cdef Py_ssize_t b, i, j, ki, kj, ch, col
    with nogil:
        for b in range(n):
            for i in range(oh):
                for j in range(ow):
                    col = 0
                    for ki in range(kh):
                        for kj in range(kw):
                            for ch in range(c):
                                out[b, i, j, col] = x[b, i + ki, j + kj, ch]
                                col += 1
    return out_np


def col2im(real[:, :, :, ::1] cols, x_shape, int kh, int kw):
    cdef Py_ssize_t n = x_shape[0]
    cdef Py_ssize_t h = x_shape[1]
    cdef Py_ssize_t w = x_shape[2]
    cdef Py_ssize_t c = x_shape[3]
    cdef Py_ssize_t oh = h - kh + 1
    cdef Py_ssize_t ow = w - kw + 1
    dx_np = np.zeros((n, h, w, c), dtype=np.asarray(cols).dtype)
    cdef real[:, :, :, ::1] dx = dx_np
    cdef Py_ssize_t b, i, j, ki, kj, ch, base
    # (ki, kj) outermost so each cell accumulates in the same order as the
    # numpy backend, keeping the two back ends bitwise identical.
    with nogil:
        for ki in range(kh):
            for kj in range(kw):
                base = (ki * kw + kj) * c
                for b in range(n):
                    for i in range(oh):
                        for j in range(ow):
                            for ch in range(c):
                                dx[b, i + ki, j + kj, ch] += cols[b, i, j, base + ch]
    return dx_np


def maxpool2x2_forward(real[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t h = x.shape[1]
    cdef Py_ssize_t w = x.shape[2]
    cdef Py_ssize_t c = x.shape[3]
    cdef Py_ssize_t oh = h // 2
    cdef Py_ssize_t ow = w // 2
    out_np = np.empty((n, oh, ow, c), dtype=np.asarray(x).dtype)
    idx_np = np.empty((n, oh, ow, c), dtype=np.int8)
    cdef real[:, :, :, ::1] out = out_np
    cdef signed char[:, :, :, ::1] idx = idx_np
    cdef Py_ssize_t b, i, j, ch, wr, wc
    cdef real best, v
    cdef signed char k, kbest
    with nogil:
        for b in range(n):
            for i in range(oh):
                for j in range(ow):
                    for ch in range(c):
                        best = x[b, 2 * i, 2 * j, ch]
                        kbest = 0
                        for k in range(1, 4):
                            wr = k >> 1
                            wc = k & 1
                            v = x[b, 2 * i + wr, 2 * j + wc, ch]
                            if v > best:
                                best = v
                                kbest = k
                        out[b, i, j, ch] = best
                        idx[b, i, j, ch] = kbest
    return out_np, idx_np


def maxpool2x2_backward(real[:, :, :, ::1] dy, signed char[:, :, :, ::1] idx, x_shape):
    cdef Py_ssize_t n = x_shape[0]
    cdef Py_ssize_t h = x_shape[1]
    cdef Py_ssize_t w = x_shape[2]
    cdef Py_ssize_t c = x_shape[3]
    cdef Py_ssize_t oh = h // 2
    cdef Py_ssize_t ow = w // 2
    dx_np = np.zeros((n, h, w, c), dtype=np.asarray(dy).dtype)
    cdef real[:, :, :, ::1] dx = dx_np
    cdef Py_ssize_t b, i, j, ch
    cdef signed char k
    with nogil:
        for b in range(n):
            for i in range(oh):
                for j in range(ow):
                    for ch in range(c):
                        k = idx[b, i, j, ch]
                        dx[b, 2 * i + (k >> 1), 2 * j + (k & 1), ch] = dy[b, i, j, ch]
    return dx_np
