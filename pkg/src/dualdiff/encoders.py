"""Frozen toy encoders: an exactly invertible image <-> latent codec and a
small frozen text transformer producing the token-wise condition c and the
L2-normalized global query e.

Both are pure numpy (no tape): their parameters never receive gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import sinusoidal_embedding

PAD_ID, BOS_ID, EOS_ID = 0, 1, 2

DEFAULT_VOCAB = [
    "<pad>", "<bos>", "<eos>",
    "a", "an", "of", "photo", "image",
    "red", "green", "blue", "yellow",
    "square", "circle", "triangle",
]

IMAGE_SIZE = 16
LATENT_CHANNELS = 12
LATENT_SIZE = 8
TOKEN_LEN = 8


def write_vocab(path, vocab=DEFAULT_VOCAB):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(vocab) + "\n")


def read_vocab(path):
    with open(path, encoding="utf-8") as fh:
        vocab = [line.rstrip("\n") for line in fh if line.strip()]
    if len(vocab) < 3:
        raise ConfigError(f"vocabulary at {path} must reserve ids 0/1/2 for PAD/BOS/EOS")
    return vocab


def tokenize(caption, vocab=DEFAULT_VOCAB, length=TOKEN_LEN):
    """BOS-framed, EOS-terminated, PAD-completed id list of fixed length."""
    lookup = {w: i for i, w in enumerate(vocab)}
    words = caption.lower().split()
    ids = [BOS_ID]
    for w in words:
        if w not in lookup:
            raise ConfigError(f"unknown token {w!r} (not in vocabulary)")
        ids.append(lookup[w])
    ids.append(EOS_ID)
    if len(ids) > length:
        raise ConfigError(f"caption {caption!r} exceeds token length {length}")
    return ids + [PAD_ID] * (length - len(ids))


class ImageCodec:
    """Exactly invertible 16x16x3 <-> 8x8x12 map.

    space-to-depth(2) followed by a seeded signed channel permutation; the
    permutation is orthogonal, so decode(encode(x)) == x bit-exactly and
    Frobenius norms are preserved.
    """

    def __init__(self, rng):
        self.perm = rng.permutation(LATENT_CHANNELS).astype(np.int64)
        self.signs = (rng.integers(0, 2, LATENT_CHANNELS) * 2 - 1).astype(np.float32)
        self.inv_perm = np.argsort(self.perm)

    def encode(self, x):
        x, single = _ensure_batch(x, (IMAGE_SIZE, IMAGE_SIZE, 3))
        b = x.shape[0]
        s2d = (x.reshape(b, LATENT_SIZE, 2, LATENT_SIZE, 2, 3)
                .transpose(0, 1, 3, 2, 4, 5)
                .reshape(b, LATENT_SIZE, LATENT_SIZE, LATENT_CHANNELS))
        z = s2d[..., self.perm] * self.signs
        return z[0] if single else z

    def decode(self, z):
        z, single = _ensure_batch(z, (LATENT_SIZE, LATENT_SIZE, LATENT_CHANNELS))
        b = z.shape[0]
        s2d = (z * self.signs)[..., self.inv_perm]
        x = (s2d.reshape(b, LATENT_SIZE, LATENT_SIZE, 2, 2, 3)
                .transpose(0, 1, 3, 2, 4, 5)
                .reshape(b, IMAGE_SIZE, IMAGE_SIZE, 3))
        return x[0] if single else x

    def state_dict(self):
        return {
            "codec.perm": self.perm.astype(np.float32),
            "codec.signs": self.signs,
        }

    def load_state_dict(self, state):
        self.perm = state["codec.perm"].astype(np.int64)
        self.signs = state["codec.signs"].astype(np.float32)
        self.inv_perm = np.argsort(self.perm)


def _ensure_batch(arr, tail_shape):
    arr = np.asarray(arr, dtype=np.float32)
    if arr.shape == tail_shape:
        return arr[None], True
    if arr.shape[1:] == tail_shape:
        return arr, False
    raise ShapeError(f"expected shape (B,)+{tail_shape} or {tail_shape}, got {arr.shape}")


def null_image_condition(batch=None):
    """All-zeros latent (the dropped image condition)."""
    shape = (LATENT_SIZE, LATENT_SIZE, LATENT_CHANNELS)
    if batch is not None:
        shape = (batch,) + shape
    return np.zeros(shape, dtype=np.float32)


@dataclass
class TextBundle:
    """Token-wise condition (L x d) and L2-normalized global query (d,)."""

    condition: np.ndarray
    query: np.ndarray
    token_ids: list


def _np_layer_norm(x, gain, bias, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return (xc / np.sqrt(var + eps)) * gain + bias


def _np_silu(x):
    return x / (1.0 + np.exp(-x))


class TextEncoder:
    """Frozen 2-block pre-norm transformer over the toy vocabulary.

    c is the final token-wise hidden state; e is the layer-normed state at the
    EOS position, L2-normalized. PAD keys are masked out of attention, so e is
    invariant to trailing PAD count. All parameters are frozen at seeded init.
    """

    # Frozen-init scales, chosen so token identity (not position) dominates
    # the pooled query: unit-std embeddings, damped positions, doubled mixing
    # weights. With the defaults the 12 class captions span cosines ~0.6-0.96
    # instead of collapsing onto one direction.
    EMB_STD = 1.0
    POS_SCALE = 0.25
    MIX_GAIN = 2.0

    def __init__(self, vocab, rng, dim=64, depth=2, heads=4, ffn_mult=4):
        self.vocab = list(vocab)
        self.dim = dim
        self.depth = depth
        self.heads = heads
        v = len(self.vocab)
        gain = self.MIX_GAIN
        p = {"emb": rng.normal(0.0, self.EMB_STD, (v, dim))}
        hidden = dim * ffn_mult
        for i in range(depth):
            pre = f"blocks.{i}."
            p[pre + "ln1.gain"] = np.ones(dim)
            p[pre + "ln1.bias"] = np.zeros(dim)
            p[pre + "qkv.w"] = rng.normal(0.0, gain / math.sqrt(dim), (dim, 3 * dim))
            p[pre + "qkv.b"] = np.zeros(3 * dim)
            p[pre + "proj.w"] = rng.normal(0.0, gain / math.sqrt(dim), (dim, dim))
            p[pre + "proj.b"] = np.zeros(dim)
            p[pre + "ln2.gain"] = np.ones(dim)
            p[pre + "ln2.bias"] = np.zeros(dim)
            p[pre + "ffn.l1.w"] = rng.normal(0.0, gain / math.sqrt(dim), (dim, hidden))
            p[pre + "ffn.l1.b"] = np.zeros(hidden)
            p[pre + "ffn.l2.w"] = rng.normal(0.0, gain / math.sqrt(hidden), (hidden, dim))
            p[pre + "ffn.l2.b"] = np.zeros(dim)
        p["ln_final.gain"] = np.ones(dim)
        p["ln_final.bias"] = np.zeros(dim)
        self.params = {k: np.asarray(v_, dtype=np.float32) for k, v_ in p.items()}

    def encode_ids(self, ids):
        """(B, L) int ids -> (c (B,L,d), e (B,d)); L may vary per call."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        v = len(self.vocab)
        if ((ids < 0) | (ids >= v)).any():
            raise ConfigError(f"token id outside vocabulary of size {v}")
        if not (ids == EOS_ID).any(axis=1).all():
            raise ConfigError("every token sequence must contain EOS")
        p = self.params
        b, length = ids.shape
        pos = sinusoidal_embedding(np.arange(length), self.dim) * self.POS_SCALE
        h = p["emb"][ids] + pos[None]
        visible = ids != PAD_ID  # (B, L) attention key mask
        for i in range(self.depth):
            pre = f"blocks.{i}."
            u = _np_layer_norm(h, p[pre + "ln1.gain"], p[pre + "ln1.bias"])
            h = h + self._attend(u, visible, p, pre)
            u = _np_layer_norm(h, p[pre + "ln2.gain"], p[pre + "ln2.bias"])
            ff = _np_silu(u @ p[pre + "ffn.l1.w"] + p[pre + "ffn.l1.b"])
            h = h + (ff @ p[pre + "ffn.l2.w"] + p[pre + "ffn.l2.b"])
        eos_pos = (ids == EOS_ID).argmax(axis=1)
        pooled = _np_layer_norm(h[np.arange(b), eos_pos],
                                p["ln_final.gain"], p["ln_final.bias"])
        e = pooled / np.sqrt((pooled * pooled).sum(axis=-1, keepdims=True))
        return h.astype(np.float32), e.astype(np.float32)

    def _attend(self, u, visible, p, pre):
        b, length, d = u.shape
        heads = self.heads
        dh = d // heads
        qkv = u @ p[pre + "qkv.w"] + p[pre + "qkv.b"]
        qkv = qkv.reshape(b, length, 3, heads, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = q @ k.transpose(0, 1, 3, 2) / math.sqrt(dh)
        scores = np.where(visible[:, None, None, :], scores, -np.inf)
        scores = scores - scores.max(axis=-1, keepdims=True)
        w = np.exp(scores)
        w = w / w.sum(axis=-1, keepdims=True)
        ctx = (w @ v).transpose(0, 2, 1, 3).reshape(b, length, d)
        return ctx @ p[pre + "proj.w"] + p[pre + "proj.b"]

    def encode(self, token_ids):
        """Single id list -> TextBundle."""
        c, e = self.encode_ids(np.asarray(token_ids)[None])
        return TextBundle(condition=c[0], query=e[0], token_ids=list(token_ids))

    def encode_captions(self, captions):
        ids = np.array([tokenize(cap, self.vocab) for cap in captions])
        return self.encode_ids(ids)

    def null_condition(self):
        """Condition of the empty caption (BOS EOS PAD...)."""
        return self.encode(tokenize("", self.vocab)).condition

    def state_dict(self):
        return {f"text_encoder.{k}": v for k, v in self.params.items()}

    def load_state_dict(self, state):
        for k in self.params:
            self.params[k] = state[f"text_encoder.{k}"].astype(np.float32)
