# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled patch extraction kernels for 2D/3D convolution."""
import numpy as np
cimport cython

ctypedef fused real:
    float
    double


cdef void _im2col2(real[:, :, ::1] x, real[:, ::1] cols, int k) noexcept nogil:
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t p = (k - 1) // 2
    cdef Py_ssize_t c, a, b, h, w, row, sh, sw, col
    for c in range(C):
        for a in range(k):
            for b in range(k):
                row = (c * k + a) * k + b
                for h in range(H):
                    sh = h + a - p
                    col = h * W
                    if sh < 0 or sh >= H:
                        for w in range(W):
                            cols[row, col + w] = 0
                        continue
                    for w in range(W):
                        sw = w + b - p
                        if sw < 0 or sw >= W:
                            cols[row, col + w] = 0
                        else:
                            cols[row, col + w] = x[c, sh, sw]


cdef void _col2im2(real[:, ::1] cols, real[:, :, ::1] out, int k) noexcept nogil:
    cdef Py_ssize_t C = out.shape[0], H = out.shape[1], W = out.shape[2]
    cdef Py_ssize_t p = (k - 1) // 2
    cdef Py_ssize_t c, a, b, h, w, row, sh, sw, col, w0, w1
    for c in range(C):
        for a in range(k):
            for b in range(k):
                row = (c * k + a) * k + b
                w0 = p - b if p - b > 0 else 0
                w1 = W + p - b if W + p - b < W else W
                for h in range(H):
                    sh = h + a - p
                    if sh < 0 or sh >= H:
                        continue
                    col = h * W
                    for w in range(w0, w1):
                        out[c, sh, w + b - p] += cols[row, col + w]


cdef void _im2col3(real[:, :, :, ::1] x, real[:, ::1] cols, int k) noexcept nogil:
    cdef Py_ssize_t C = x.shape[0], D = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t p = (k - 1) // 2
    cdef Py_ssize_t c, e, a, b, d, h, w, row, sd, sh, sw, col, w0, w1
    for c in range(C):
        for e in range(k):
            for a in range(k):
                for b in range(k):
                    row = ((c * k + e) * k + a) * k + b
                    w0 = p - b if p - b > 0 else 0
                    w1 = W + p - b if W + p - b < W else W
                    for d in range(D):
                        sd = d + e - p
                        for h in range(H):
                            sh = h + a - p
                            col = (d * H + h) * W
                            if sd < 0 or sd >= D or sh < 0 or sh >= H:
                                for w in range(W):
                                    cols[row, col + w] = 0
                                continue
                            for w in range(w0):
                                cols[row, col + w] = 0
                            for w in range(w0, w1):
                                cols[row, col + w] = x[c, sd, sh, w + b - p]
                            for w in range(w1, W):
                                cols[row, col + w] = 0


cdef void _col2im3(real[:, ::1] cols, real[:, :, :, ::1] out, int k) noexcept nogil:
    cdef Py_ssize_t C = out.shape[0], D = out.shape[1], H = out.shape[2], W = out.shape[3]
    cdef Py_ssize_t p = (k - 1) // 2
    cdef Py_ssize_t c, e, a, b, d, h, w, row, sd, sh, col, w0, w1
    for c in range(C):
        for e in range(k):
            for a in range(k):
                for b in range(k):
                    row = ((c * k + e) * k + a) * k + b
                    w0 = p - b if p - b > 0 else 0
                    w1 = W + p - b if W + p - b < W else W
                    for d in range(D):
                        sd = d + e - p
                        if sd < 0 or sd >= D:
                            continue
                        for h in range(H):
                            sh = h + a - p
                            if sh < 0 or sh >= H:
                                continue
                            col = (d * H + h) * W
                            for w in range(w0, w1):
                                out[c, sd, sh, w + b - p] += cols[row, col + w]


def im2col(x, int k):
    x = np.ascontiguousarray(x)
    cdef Py_ssize_t C = x.shape[0]
    rank = x.ndim - 1
    n = 1
    for s in x.shape[1:]:
        n *= s
    cols = np.empty((C * k ** rank, n), dtype=x.dtype)
    if x.dtype == np.float32:
        if rank == 2:
            _im2col2[float](x, cols, k)
        else:
            _im2col3[float](x, cols, k)
    else:
        if rank == 2:
            _im2col2[double](x, cols, k)
        else:
            _im2col3[double](x, cols, k)
    return cols


def col2im(cols, int channels, spatial, int k):
    cols = np.ascontiguousarray(cols)
    spatial = tuple(spatial)
    out = np.zeros((channels,) + spatial, dtype=cols.dtype)
    if cols.dtype == np.float32:
        if len(spatial) == 2:
            _col2im2[float](cols, out, k)
        else:
            _col2im3[float](cols, out, k)
    else:
        if len(spatial) == 2:
            _col2im2[double](cols, out, k)
        else:
            _col2im3[double](cols, out, k)
    return out
