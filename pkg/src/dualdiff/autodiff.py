"""Dense tensor algebra with reverse-mode automatic differentiation.

A Tensor wraps a row-major numpy array (float32 or float64) plus an optional
gradient buffer. Differentiable ops record a backward closure on the active
Tape; with no tape active, ops run in plain inference mode and retain no
graph. A Tape is single-threaded and replays its nodes exactly once, in
reverse insertion order, when ``backward`` is called on a scalar recorded on
it. Gradients accumulate additively when a tensor feeds several consumers.

Reductions inherit numpy's fixed deterministic ordering, so every forward op
is bit-deterministic given identical inputs.
"""

from __future__ import annotations

import math
import weakref

import numpy as np

from . import _kernels
from .errors import ConfigError, ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """n-dimensional float array participating in reverse-mode differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, data, dtype=None, requires_grad=False):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        """A view of the same data with no tape attachment."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


class Parameter(Tensor):
    """Trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, dtype=dtype, requires_grad=True)


class Tape:
    """Ordered record of differentiable ops; context manager activates it."""

    def __init__(self):
        self._nodes = []
        self._consumed = False

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _ACTIVE.pop()
        assert popped is self
        return False

    def backward(self, loss):
        backward(loss)


_ACTIVE: list[Tape] = []


def active_tape():
    return _ACTIVE[-1] if _ACTIVE else None


def _record(out, inputs, bwd):
    tape = active_tape()
    if tape is not None and not tape._consumed and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        # weakref: tensors must not keep the tape (and hence the whole graph)
        # alive through a reference cycle
        out._tape = weakref.ref(tape)
        tape._nodes.append((out, bwd))
    return out


def _acc(t, g, fresh):
    """Accumulate gradient g into t. fresh=True means g is a newly allocated
    array this closure owns; otherwise it is copied before being stored so a
    later in-place accumulation cannot corrupt an aliased buffer."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g if fresh else g.copy()
    else:
        t.grad += g


def backward(loss):
    """Populate grads of everything on the loss's tape via one reverse sweep."""
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = loss._tape() if loss._tape is not None else None
    if tape is None:
        raise ValueError("backward on a detached tensor: loss is not recorded on any tape")
    if tape._consumed:
        raise RuntimeError("tape already consumed by a previous backward; build a new tape")
    tape._consumed = True
    loss.grad = np.ones_like(loss.data)
    for out, bwd in reversed(tape._nodes):
        g = out.grad
        if g is None:
            continue
        bwd(g)
        out.grad = None  # free: intermediates are dead once their node ran
    tape._nodes.clear()  # release saved activations promptly


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g, shape):
    """Sum g down to `shape` (inverse of numpy broadcasting).

    Returns (array, fresh) where fresh says whether a new array was allocated.
    """
    if g.shape == tuple(shape):
        return g, False
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g, True


# --- elementwise ----------------------------------------------------------

def add(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    out = Tensor(a.data + b.data)

    def bwd(g):
        ga, fa = _unbroadcast(g, a.shape)
        _acc(a, ga, fa)
        gb, fb = _unbroadcast(g, b.shape)
        _acc(b, gb, fb)

    return _record(out, (a, b), bwd)


def sub(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    out = Tensor(a.data - b.data)

    def bwd(g):
        ga, fa = _unbroadcast(g, a.shape)
        _acc(a, ga, fa)
        gb, fb = _unbroadcast(-g, b.shape)
        _acc(b, gb, True)

    return _record(out, (a, b), bwd)


def neg(a):
    a = _as_tensor(a)
    out = Tensor(-a.data)

    def bwd(g):
        _acc(a, -g, True)

    return _record(out, (a,), bwd)


def mul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    out = Tensor(a.data * b.data)

    def bwd(g):
        if a.requires_grad:
            ga, _ = _unbroadcast(g * b.data, a.shape)
            _acc(a, ga, True)
        if b.requires_grad:
            gb, _ = _unbroadcast(g * a.data, b.shape)
            _acc(b, gb, True)

    return _record(out, (a, b), bwd)


def div(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    out = Tensor(a.data / b.data)

    def bwd(g):
        if a.requires_grad:
            ga, _ = _unbroadcast(g / b.data, a.shape)
            _acc(a, ga, True)
        if b.requires_grad:
            gb, _ = _unbroadcast(-g * out.data / b.data, b.shape)
            _acc(b, gb, True)

    return _record(out, (a, b), bwd)


def exp(a):
    a = _as_tensor(a)
    out = Tensor(np.exp(a.data))

    def bwd(g):
        _acc(a, g * out.data, True)

    return _record(out, (a,), bwd)


def log(a):
    a = _as_tensor(a)
    out = Tensor(np.log(a.data))

    def bwd(g):
        _acc(a, g / a.data, True)

    return _record(out, (a,), bwd)


def sqrt(a):
    a = _as_tensor(a)
    out = Tensor(np.sqrt(a.data))

    def bwd(g):
        _acc(a, g / (2.0 * out.data), True)

    return _record(out, (a,), bwd)


def silu(a):
    """x * sigmoid(x)."""
    a = _as_tensor(a)
    sig = np.negative(a.data)
    np.exp(sig, out=sig)
    sig += 1.0
    np.reciprocal(sig, out=sig)
    out = Tensor(a.data * sig)

    def bwd(g):
        _acc(a, g * (sig * (1.0 + a.data * (1.0 - sig))), True)

    return _record(out, (a,), bwd)


# --- reductions / shape ----------------------------------------------------

def sum_(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        _acc(a, np.broadcast_to(g, a.shape).copy(), True)

    return _record(out, (a,), bwd)


def mean_(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    n = a.size / out.size

    def bwd(g):
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        _acc(a, np.broadcast_to(g, a.shape) / n, True)

    return _record(out, (a,), bwd)


def reshape(a, shape):
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape))

    def bwd(g):
        _acc(a, g.reshape(a.shape), False)

    return _record(out, (a,), bwd)


def transpose(a, axes):
    a = _as_tensor(a)
    if not axes:
        axes = tuple(reversed(range(a.ndim)))
    out = Tensor(a.data.transpose(axes))
    inv = np.argsort(axes)

    def bwd(g):
        _acc(a, g.transpose(inv), False)

    return _record(out, (a,), bwd)


def concat(tensors, axis):
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _acc(t, g[tuple(idx)], False)

    return _record(out, tuple(tensors), bwd)


def slice_axis(a, axis, start, stop):
    a = _as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = Tensor(a.data[idx])

    def bwd(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[idx] = g
        _acc(a, full, True)

    return _record(out, (a,), bwd)


def upsample_nearest2x(a):
    """(B,C,H,W) -> (B,C,2H,2W) by pixel duplication."""
    a = _as_tensor(a)
    out = Tensor(a.data.repeat(2, axis=2).repeat(2, axis=3))

    def bwd(g):
        b, c, h2, w2 = g.shape
        _acc(a, g.reshape(b, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)), True)

    return _record(out, (a,), bwd)


# --- linear algebra ---------------------------------------------------------

def matmul(a, b):
    """Matrix product with numpy batch broadcasting on leading dims.

    Backward: dA = dC @ B^T, dB = A^T @ dC (batch dims summed back down).
    """
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            ga, _ = _unbroadcast(ga, a.shape)
            _acc(a, ga, True)
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            gb, _ = _unbroadcast(gb, b.shape)
            _acc(b, gb, True)

    return _record(out, (a, b), bwd)


def conv2d(x, w, bias=None, stride=1, pad=0):
    """Cross-correlation of (B,C,H,W) with (O,C,kh,kw), zero padding.

    Output extent (H + 2*pad - kh) / stride + 1 must be a whole number.
    """
    x = _as_tensor(x)
    w = _as_tensor(w, like=x)
    b_, c, h, wd = x.shape
    o, cw, kh, kw = w.shape
    if c != cw:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape}, weight {w.shape}")
    if kh > h + 2 * pad or kw > wd + 2 * pad:
        raise ConfigError(f"kernel {kh}x{kw} exceeds padded input {h + 2 * pad}x{wd + 2 * pad}")
    if (h + 2 * pad - kh) % stride or (wd + 2 * pad - kw) % stride:
        raise ConfigError(
            f"conv2d output extent is not an integer for input {h}x{wd}, "
            f"kernel {kh}x{kw}, stride {stride}, pad {pad}")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1

    cols = _kernels.im2col(x.data, kh, kw, stride, pad)  # (B*OH*OW, C*kh*kw)
    wmat = w.data.reshape(o, -1)
    out_data = cols @ wmat.T
    if bias is not None:
        bias = _as_tensor(bias, like=x)
        out_data = out_data + bias.data
    out = Tensor(out_data.reshape(b_, oh, ow, o).transpose(0, 3, 1, 2))

    def bwd(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, o)
        if w.requires_grad:
            _acc(w, (gmat.T @ cols).reshape(w.shape), True)
        if bias is not None and bias.requires_grad:
            _acc(bias, gmat.sum(axis=0), True)
        if x.requires_grad:
            dcols = gmat @ wmat
            _acc(x, _kernels.col2im(dcols, x.shape, kh, kw, stride, pad), True)

    inputs = (x, w) if bias is None else (x, w, bias)
    return _record(out, inputs, bwd)


def conv2d_nhwc(x, w, bias=None, stride=1, pad=0):
    """channels-last twin of conv2d: (B,H,W,C) with (O,C,kh,kw) weights.

    Mathematically identical to conv2d on transposed data; used on the hot
    path where channel runs are contiguous.
    """
    x = _as_tensor(x)
    w = _as_tensor(w, like=x)
    b_, h, wd, c = x.shape
    o, cw, kh, kw = w.shape
    if c != cw:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape}, weight {w.shape}")
    if kh > h + 2 * pad or kw > wd + 2 * pad:
        raise ConfigError(f"kernel {kh}x{kw} exceeds padded input {h + 2 * pad}x{wd + 2 * pad}")
    if (h + 2 * pad - kh) % stride or (wd + 2 * pad - kw) % stride:
        raise ConfigError(
            f"conv2d output extent is not an integer for input {h}x{wd}, "
            f"kernel {kh}x{kw}, stride {stride}, pad {pad}")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1

    cols = _kernels.im2col_nhwc(x.data, kh, kw, stride, pad)  # (B*OH*OW, kh*kw*C)
    wmat = np.ascontiguousarray(w.data.transpose(2, 3, 1, 0).reshape(kh * kw * c, o))
    out_data = cols @ wmat
    if bias is not None:
        bias = _as_tensor(bias, like=x)
        out_data = out_data + bias.data
    out = Tensor(out_data.reshape(b_, oh, ow, o))

    def bwd(g):
        gmat = g.reshape(-1, o)
        if w.requires_grad:
            gw = (cols.T @ gmat).reshape(kh, kw, c, o).transpose(3, 2, 0, 1)
            _acc(w, np.ascontiguousarray(gw), True)
        if bias is not None and bias.requires_grad:
            _acc(bias, gmat.sum(axis=0), True)
        if x.requires_grad:
            dcols = gmat @ wmat.T
            _acc(x, _kernels.col2im_nhwc(dcols, x.shape, kh, kw, stride, pad), True)

    inputs = (x, w) if bias is None else (x, w, bias)
    return _record(out, inputs, bwd)


def upsample_nearest2x_nhwc(a):
    """(B,H,W,C) -> (B,2H,2W,C) by pixel duplication."""
    a = _as_tensor(a)
    out = Tensor(a.data.repeat(2, axis=1).repeat(2, axis=2))

    def bwd(g):
        b, h2, w2, c = g.shape
        _acc(a, g.reshape(b, h2 // 2, 2, w2 // 2, 2, c).sum(axis=(2, 4)), True)

    return _record(out, (a,), bwd)


# --- normalization / softmax ------------------------------------------------

def softmax(x, axis=-1):
    """Max-subtracted exponentiation normalized along `axis`."""
    x = _as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    y = x.data - x.data.max(axis=axis, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _acc(x, y * (g - dot), True)

    return _record(out, (x,), bwd)


def logsumexp(x, axis=-1, keepdims=True):
    x = _as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    val = m + np.log(s)
    out = Tensor(val if keepdims else np.squeeze(val, axis=axis))
    soft = e / s

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        _acc(x, g * soft, True)

    return _record(out, (x,), bwd)


def log_softmax(x, axis=-1):
    return sub(x, logsumexp(x, axis=axis, keepdims=True))


def layer_norm(x, gain, bias, eps=1e-5):
    """Standardize the last axis to zero mean / unit variance, then affine."""
    x = _as_tensor(x)
    gain = _as_tensor(gain, like=x)
    bias = _as_tensor(bias, like=x)
    n = x.shape[-1]
    if n <= 1:
        raise ConfigError(f"layer_norm needs a normalized extent > 1, got {n}")
    if eps <= 0:
        raise ConfigError("layer_norm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)

    def bwd(g):
        if gain.requires_grad:
            red = tuple(range(g.ndim - 1))
            _acc(gain, (g * xhat).sum(axis=red), True)
        if bias.requires_grad:
            red = tuple(range(g.ndim - 1))
            _acc(bias, g.sum(axis=red), True)
        if x.requires_grad:
            gy = g * gain.data
            gmean = gy.mean(axis=-1, keepdims=True)
            gxhat = (gy * xhat).mean(axis=-1, keepdims=True)
            _acc(x, inv * (gy - gmean - xhat * gxhat), True)

    return _record(out, (x, gain, bias), bwd)


def group_norm(x, groups, gain, bias, eps=1e-5):
    """Per-(sample, group) standardization of (B,C,H,W), then per-channel affine."""
    x = _as_tensor(x)
    gain = _as_tensor(gain, like=x)
    bias = _as_tensor(bias, like=x)
    b, c, h, w = x.shape
    if c % groups:
        raise ConfigError(f"group_norm groups={groups} does not divide channels={c}")
    if eps <= 0:
        raise ConfigError("group_norm eps must be positive")
    if c // groups * h * w <= 1:
        raise ConfigError("group_norm needs a normalized extent > 1")
    xg = x.data.reshape(b, groups, -1)
    mu = xg.mean(axis=-1, keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).reshape(b, c, h, w)
    gv = gain.data.reshape(1, c, 1, 1)
    out = Tensor(xhat * gv + bias.data.reshape(1, c, 1, 1))

    def bwd(g):
        if gain.requires_grad:
            _acc(gain, (g * xhat).sum(axis=(0, 2, 3)), True)
        if bias.requires_grad:
            _acc(bias, g.sum(axis=(0, 2, 3)), True)
        if x.requires_grad:
            gy = (g * gv).reshape(b, groups, -1)
            xh = xhat.reshape(b, groups, -1)
            gmean = gy.mean(axis=-1, keepdims=True)
            gxhat = (gy * xh).mean(axis=-1, keepdims=True)
            _acc(x, (inv * (gy - gmean - xh * gxhat)).reshape(x.shape), True)

    return _record(out, (x, gain, bias), bwd)


def group_norm_nhwc(x, groups, gain, bias, eps=1e-5):
    """channels-last twin of group_norm: (B,H,W,C), per-channel affine."""
    x = _as_tensor(x)
    gain = _as_tensor(gain, like=x)
    bias = _as_tensor(bias, like=x)
    b, h, w, c = x.shape
    if c % groups:
        raise ConfigError(f"group_norm groups={groups} does not divide channels={c}")
    if eps <= 0:
        raise ConfigError("group_norm eps must be positive")
    if c // groups * h * w <= 1:
        raise ConfigError("group_norm needs a normalized extent > 1")
    cg = c // groups
    xg = x.data.reshape(b, h * w, groups, cg)
    mu = xg.mean(axis=(1, 3), keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=(1, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).reshape(b, h, w, c)
    out_data = xhat * gain.data
    out_data += bias.data
    out = Tensor(out_data)

    def bwd(g):
        if gain.requires_grad:
            _acc(gain, (g * xhat).sum(axis=(0, 1, 2)), True)
        if bias.requires_grad:
            _acc(bias, g.sum(axis=(0, 1, 2)), True)
        if x.requires_grad:
            gy = (g * gain.data).reshape(b, h * w, groups, cg)
            xh = xhat.reshape(b, h * w, groups, cg)
            gmean = gy.mean(axis=(1, 3), keepdims=True)
            gxhat = (gy * xh).mean(axis=(1, 3), keepdims=True)
            _acc(x, (inv * (gy - gmean - xh * gxhat)).reshape(x.shape), True)

    return _record(out, (x, gain, bias), bwd)


def l2_normalize(x, axis=-1, eps=1e-12):
    """x / max(||x||_2, eps) along `axis`."""
    x = _as_tensor(x)
    if eps <= 0:
        raise ConfigError("l2_normalize eps must be positive")
    n = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    m = np.maximum(n, eps)
    y = x.data / m
    out = Tensor(y)

    def bwd(g):
        dot = (g * x.data).sum(axis=axis, keepdims=True)
        live = (n > eps).astype(x.dtype)
        _acc(x, g / m - x.data * (dot * live / (m * m * m)), True)

    return _record(out, (x,), bwd)


# --- finite differences ------------------------------------------------------

def finite_diff_check(f, x, h=1e-4):
    """Max scale-normalized difference between backward() and central differences.

    f must be a deterministic Tensor -> scalar Tensor map. The analytic
    gradient comes from one taped backward pass; the numeric one perturbs x
    elementwise by +-h. The error is ||g_ad - g_fd||_inf normalized by the
    largest gradient magnitude (floored at 1), so a wrong backward rule on
    O(1) gradients shows up as an O(1) error.
    """
    if not (1e-6 <= h <= 1e-3):
        raise ConfigError(f"finite_diff_check h={h} outside [1e-6, 1e-3]")
    x = _as_tensor(x)
    x.data = np.ascontiguousarray(x.data)  # perturbed in place below
    x.requires_grad = True
    x.grad = None
    with Tape() as tape:
        loss = f(x)
    tape.backward(loss)
    g_ad = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)

    g_fd = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    fd = g_fd.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x).item()
        flat[i] = orig - h
        fm = f(x).item()
        flat[i] = orig
        fd[i] = (fp - fm) / (2.0 * h)
    scale = max(np.abs(g_ad).max(initial=0.0), np.abs(g_fd).max(initial=0.0), 1.0)
    return float(np.abs(g_ad - g_fd).max(initial=0.0) / scale)
