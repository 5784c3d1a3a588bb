# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled conv2d patch kernels (NCHW and NHWC layouts).

Bit-identical to the numpy fallback: im2col is pure data movement and
col2im accumulates into each output element in (ki, kj) ascending order,
matching the fallback's slice-add loop.
"""

import numpy as np

cimport cython

ctypedef fused floating:
    float
    double


def im2col(x, int kh, int kw, int stride, int pad):
    """(B,C,H,W) -> (B*OH*OW, C*kh*kw) patch matrix."""
    x = np.ascontiguousarray(x)
    b, c, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = np.empty((b * oh * ow, c * kh * kw), dtype=x.dtype)
    if x.dtype == np.float32:
        _im2col_nchw[float](x, cols, kh, kw, stride, pad, oh, ow)
    else:
        _im2col_nchw[double](x, cols, kh, kw, stride, pad, oh, ow)
    return cols


def col2im(cols, x_shape, int kh, int kw, int stride, int pad):
    """Scatter-add inverse of im2col: (B*OH*OW, C*kh*kw) -> (B,C,H,W)."""
    cols = np.ascontiguousarray(cols)
    b, c, h, w = x_shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    x = np.zeros((b, c, h, w), dtype=cols.dtype)
    if cols.dtype == np.float32:
        _col2im_nchw[float](cols, x, kh, kw, stride, pad, oh, ow)
    else:
        _col2im_nchw[double](cols, x, kh, kw, stride, pad, oh, ow)
    return x


def im2col_nhwc(x, int kh, int kw, int stride, int pad):
    """(B,H,W,C) -> (B*OH*OW, kh*kw*C) patch matrix."""
    x = np.ascontiguousarray(x)
    b, h, w, c = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = np.empty((b * oh * ow, kh * kw * c), dtype=x.dtype)
    if x.dtype == np.float32:
        _im2col_nhwc[float](x, cols, kh, kw, stride, pad, oh, ow)
    else:
        _im2col_nhwc[double](x, cols, kh, kw, stride, pad, oh, ow)
    return cols


def col2im_nhwc(cols, x_shape, int kh, int kw, int stride, int pad):
    """Scatter-add inverse of im2col_nhwc: (B*OH*OW, kh*kw*C) -> (B,H,W,C)."""
    cols = np.ascontiguousarray(cols)
    b, h, w, c = x_shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    x = np.zeros((b, h, w, c), dtype=cols.dtype)
    if cols.dtype == np.float32:
        _col2im_nhwc[float](cols, x, kh, kw, stride, pad, oh, ow)
    else:
        _col2im_nhwc[double](cols, x, kh, kw, stride, pad, oh, ow)
    return x


cdef void _im2col_nchw(floating[:, :, :, ::1] x, floating[:, ::1] cols,
                       int kh, int kw, int stride, int pad,
                       Py_ssize_t oh, Py_ssize_t ow) noexcept nogil:
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t bi, ci, i, j, ki, kj, row, col, yy, xx
    for bi in range(b):
        for i in range(oh):
            for j in range(ow):
                row = (bi * oh + i) * ow + j
                for ci in range(c):
                    for ki in range(kh):
                        yy = i * stride + ki - pad
                        for kj in range(kw):
                            xx = j * stride + kj - pad
                            col = (ci * kh + ki) * kw + kj
                            if 0 <= yy < h and 0 <= xx < w:
                                cols[row, col] = x[bi, ci, yy, xx]
                            else:
                                cols[row, col] = 0.0


cdef void _col2im_nchw(floating[:, ::1] cols, floating[:, :, :, ::1] x,
                       int kh, int kw, int stride, int pad,
                       Py_ssize_t oh, Py_ssize_t ow) noexcept nogil:
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t bi, ci, i, j, ki, kj, row, col, yy, xx
    # ki/kj outermost: per-element accumulation order matches the fallback.
    for ki in range(kh):
        for kj in range(kw):
            for bi in range(b):
                for i in range(oh):
                    yy = i * stride + ki - pad
                    if yy < 0 or yy >= h:
                        continue
                    for j in range(ow):
                        xx = j * stride + kj - pad
                        if xx < 0 or xx >= w:
                            continue
                        row = (bi * oh + i) * ow + j
                        for ci in range(c):
                            col = (ci * kh + ki) * kw + kj
                            x[bi, ci, yy, xx] += cols[row, col]


cdef void _im2col_nhwc(floating[:, :, :, ::1] x, floating[:, ::1] cols,
                       int kh, int kw, int stride, int pad,
                       Py_ssize_t oh, Py_ssize_t ow) noexcept nogil:
    cdef Py_ssize_t b = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t bi, ci, i, j, ki, kj, row, yy, xx, base
    for bi in range(b):
        for i in range(oh):
            for j in range(ow):
                row = (bi * oh + i) * ow + j
                for ki in range(kh):
                    yy = i * stride + ki - pad
                    for kj in range(kw):
                        xx = j * stride + kj - pad
                        base = (ki * kw + kj) * c
                        if 0 <= yy < h and 0 <= xx < w:
                            for ci in range(c):
                                cols[row, base + ci] = x[bi, yy, xx, ci]
                        else:
                            for ci in range(c):
                                cols[row, base + ci] = 0.0


cdef void _col2im_nhwc(floating[:, ::1] cols, floating[:, :, :, ::1] x,
                       int kh, int kw, int stride, int pad,
                       Py_ssize_t oh, Py_ssize_t ow) noexcept nogil:
    cdef Py_ssize_t b = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t bi, ci, i, j, ki, kj, row, yy, xx, base
    for ki in range(kh):
        for kj in range(kw):
            base = (ki * kw + kj) * c
            for bi in range(b):
                for i in range(oh):
                    yy = i * stride + ki - pad
                    if yy < 0 or yy >= h:
                        continue
                    for j in range(ow):
                        xx = j * stride + kj - pad
                        if xx < 0 or xx >= w:
                            continue
                        row = (bi * oh + i) * ow + j
                        for ci in range(c):
                            x[bi, yy, xx, ci] += cols[row, base + ci]
