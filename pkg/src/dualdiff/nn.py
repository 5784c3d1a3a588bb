"""Neural-network building blocks on top of the autodiff tape.

Modules register parameters by attribute assignment; construction order is
fixed so a seeded rng yields a deterministic initialization.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


class Module:
    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{key}.")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p


class ModuleList(Module):
    def __init__(self, modules):
        for i, m in enumerate(modules):
            setattr(self, str(i), m)
        self._n = len(modules)

    def __iter__(self):
        return (getattr(self, str(i)) for i in range(self._n))

    def __len__(self):
        return self._n

    def __getitem__(self, i):
        return getattr(self, str(i))


class Linear(Module):
    def __init__(self, d_in, d_out, rng, dtype=np.float32, std=None, bias=True):
        if std is None:
            std = 1.0 / math.sqrt(d_in)
        self.w = Parameter(rng.normal(0.0, std, (d_in, d_out)).astype(dtype))
        self.b = Parameter(np.zeros(d_out, dtype=dtype)) if bias else None

    def __call__(self, x):
        y = ad.matmul(x, self.w)
        return y if self.b is None else ad.add(y, self.b)


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, pad=0, dtype=np.float32):
        std = math.sqrt(2.0 / (c_in * k * k))
        self.w = Parameter(rng.normal(0.0, std, (c_out, c_in, k, k)).astype(dtype))
        self.b = Parameter(np.zeros(c_out, dtype=dtype))
        self.stride = stride
        self.pad = pad

    def __call__(self, x):
        return ad.conv2d_nhwc(x, self.w, self.b, stride=self.stride, pad=self.pad)


class GroupNorm(Module):
    def __init__(self, groups, channels, eps=1e-5, dtype=np.float32):
        self.gain = Parameter(np.ones(channels, dtype=dtype))
        self.bias = Parameter(np.zeros(channels, dtype=dtype))
        self.groups = groups
        self.eps = eps

    def __call__(self, x):
        return ad.group_norm_nhwc(x, self.groups, self.gain, self.bias, eps=self.eps)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5, dtype=np.float32):
        self.gain = Parameter(np.ones(dim, dtype=dtype))
        self.bias = Parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def __call__(self, x):
        return ad.layer_norm(x, self.gain, self.bias, eps=self.eps)


def _split_heads(t, heads):
    b, n, d = t.shape
    t = ad.reshape(t, (b, n, heads, d // heads))
    return ad.transpose(t, (0, 2, 1, 3))  # (B,H,N,dh)


def _merge_heads(t):
    b, h, n, dh = t.shape
    t = ad.transpose(t, (0, 2, 1, 3))
    return ad.reshape(t, (b, n, h * dh))


def _attend(q, k, v):
    # scale q (small) rather than the NxN score matrix
    q = ad.mul(q, 1.0 / math.sqrt(q.shape[-1]))
    scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2)))
    return ad.matmul(ad.softmax(scores, axis=-1), v)


class SelfAttention(Module):
    def __init__(self, dim, heads, rng, dtype=np.float32):
        self.to_qkv = Linear(dim, 3 * dim, rng, dtype)
        self.proj = Linear(dim, dim, rng, dtype)
        self.heads = heads
        self.dim = dim

    def __call__(self, x):
        qkv = self.to_qkv(x)
        q = _split_heads(ad.slice_axis(qkv, -1, 0, self.dim), self.heads)
        k = _split_heads(ad.slice_axis(qkv, -1, self.dim, 2 * self.dim), self.heads)
        v = _split_heads(ad.slice_axis(qkv, -1, 2 * self.dim, 3 * self.dim), self.heads)
        return self.proj(_merge_heads(_attend(q, k, v)))


class CrossAttention(Module):
    def __init__(self, dim, ctx_dim, heads, rng, dtype=np.float32):
        self.to_q = Linear(dim, dim, rng, dtype)
        self.to_k = Linear(ctx_dim, dim, rng, dtype)
        self.to_v = Linear(ctx_dim, dim, rng, dtype)
        self.proj = Linear(dim, dim, rng, dtype)
        self.heads = heads

    def __call__(self, x, ctx):
        q = _split_heads(self.to_q(x), self.heads)
        k = _split_heads(self.to_k(ctx), self.heads)
        v = _split_heads(self.to_v(ctx), self.heads)
        return self.proj(_merge_heads(_attend(q, k, v)))


class FeedForward(Module):
    def __init__(self, dim, mult, rng, dtype=np.float32):
        hidden = int(dim * mult)
        self.l1 = Linear(dim, hidden, rng, dtype)
        self.l2 = Linear(hidden, dim, rng, dtype)

    def __call__(self, x):
        return self.l2(ad.silu(self.l1(x)))


class TransformerBlock(Module):
    """Pre-norm self-attention + FFN block (single shared FFN)."""

    def __init__(self, dim, heads, ffn_mult, rng, dtype=np.float32):
        self.ln1 = LayerNorm(dim, dtype=dtype)
        self.attn = SelfAttention(dim, heads, rng, dtype)
        self.ln2 = LayerNorm(dim, dtype=dtype)
        self.ffn = FeedForward(dim, ffn_mult, rng, dtype)

    def __call__(self, x):
        x = ad.add(x, self.attn(self.ln1(x)))
        return ad.add(x, self.ffn(self.ln2(x)))


def sinusoidal_embedding(t, dim, dtype=np.float32):
    """Parameter-free timestep features: [sin(t*f_i), cos(t*f_i)].

    f_i = exp(-ln(10000) * i / half). t=0 maps to [0]*half + [1]*half.
    """
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1).astype(dtype)


class TimeEmbed(Module):
    """Sinusoidal features followed by a 2-layer MLP."""

    def __init__(self, dim, rng, dtype=np.float32):
        self.l1 = Linear(dim, dim, rng, dtype)
        self.l2 = Linear(dim, dim, rng, dtype)
        self.dim = dim
        self.dtype = dtype

    def __call__(self, t):
        e = Tensor(sinusoidal_embedding(t, self.dim, self.dtype))
        return self.l2(ad.silu(self.l1(e)))


class ResBlock(Module):
    """3x3 conv block (channels-last) with scale-shift time conditioning and residual skip."""

    def __init__(self, c_in, c_out, time_dim, groups, rng, dtype=np.float32):
        self.gn1 = GroupNorm(groups, c_in, dtype=dtype)
        self.conv1 = Conv2d(c_in, c_out, 3, rng, pad=1, dtype=dtype)
        self.temb = Linear(time_dim, 2 * c_out, rng, dtype)
        self.gn2 = GroupNorm(groups, c_out, dtype=dtype)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, pad=1, dtype=dtype)
        self.skip = Conv2d(c_in, c_out, 1, rng, dtype=dtype) if c_in != c_out else None
        self.c_out = c_out

    def __call__(self, x, temb):
        h = self.conv1(ad.silu(self.gn1(x)))
        ss = self.temb(ad.silu(temb))
        b = ss.shape[0]
        ss = ad.reshape(ss, (b, 1, 1, 2 * self.c_out))
        scale = ad.slice_axis(ss, 3, 0, self.c_out)
        shift = ad.slice_axis(ss, 3, self.c_out, 2 * self.c_out)
        h = ad.add(ad.mul(self.gn2(h), ad.add(scale, 1.0)), shift)
        h = self.conv2(ad.silu(h))
        return ad.add(h, self.skip(x) if self.skip is not None else x)
