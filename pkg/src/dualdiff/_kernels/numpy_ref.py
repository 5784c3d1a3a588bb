"""Pure-numpy conv2d patch kernels (fallback backend).

Two layouts: NCHW (the public conv2d op) and NHWC (the backbone hot path,
where the innermost channel runs are contiguous so patch extraction is close
to a memcpy). Both backends produce bit-identical results: im2col is pure
data movement, and col2im accumulates contributions into each output element
in the same (ki, kj) ascending order, so the compiled backend can replace
this one without changing a single bit of any forward or backward pass.
"""

import numpy as np


def out_hw(h, w, kh, kw, stride, pad):
    return (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1


def im2col(x, kh, kw, stride, pad):
    """(B,C,H,W) -> (B*OH*OW, C*kh*kw) patch matrix."""
    b, c, h, w = x.shape
    oh, ow = out_hw(h, w, kh, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    s0, s1, s2, s3 = x.strides
    win = np.lib.stride_tricks.as_strided(
        x, (b, c, oh, ow, kh, kw), (s0, s1, s2 * stride, s3 * stride, s2, s3)
    )
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * kh * kw)


def col2im(cols, x_shape, kh, kw, stride, pad):
    """Scatter-add inverse of im2col: (B*OH*OW, C*kh*kw) -> (B,C,H,W)."""
    b, c, h, w = x_shape
    oh, ow = out_hw(h, w, kh, kw, stride, pad)
    c6 = cols.reshape(b, oh, ow, c, kh, kw)
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for ki in range(kh):
        for kj in range(kw):
            xp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += (
                c6[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
            )
    if pad:
        return xp[:, :, pad:pad + h, pad:pad + w].copy()
    return xp


def im2col_nhwc(x, kh, kw, stride, pad):
    """(B,H,W,C) -> (B*OH*OW, kh*kw*C) patch matrix."""
    b, h, w, c = x.shape
    oh, ow = out_hw(h, w, kh, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    s0, s1, s2, s3 = x.strides
    win = np.lib.stride_tricks.as_strided(
        x, (b, oh, ow, kh, kw, c), (s0, s1 * stride, s2 * stride, s1, s2, s3)
    )
    return win.reshape(b * oh * ow, kh * kw * c)


def col2im_nhwc(cols, x_shape, kh, kw, stride, pad):
    """Scatter-add inverse of im2col_nhwc: (B*OH*OW, kh*kw*C) -> (B,H,W,C)."""
    b, h, w, c = x_shape
    oh, ow = out_hw(h, w, kh, kw, stride, pad)
    c6 = cols.reshape(b, oh, ow, kh, kw, c)
    xp = np.zeros((b, h + 2 * pad, w + 2 * pad, c), dtype=cols.dtype)
    for ki in range(kh):
        for kj in range(kw):
            xp[:, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride, :] += (
                c6[:, :, :, ki, kj, :]
            )
    if pad:
        return xp[:, pad:pad + h, pad:pad + w, :].copy()
    return xp
