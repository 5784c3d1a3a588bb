"""The shared denoising network: a mini-UNet whose attention stages are
dual-stream deep fusion blocks, plus the mid transformer and linear predictor
serving the alignment head.

Two entry points share one trunk:
  - generation: noisy latent + text condition c -> predicted noise; the text
    query stream is masked to zero.
  - alignment: clean latent tagged with the out-of-range mask timestep + noisy
    text query -> predicted clean query; the text condition is masked to the
    null caption and only the encoder half of the UNet runs, ending in the
    mid transformer and linear predictor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .nn import (
    Conv2d,
    CrossAttention,
    FeedForward,
    GroupNorm,
    LayerNorm,
    Linear,
    Module,
    ModuleList,
    ResBlock,
    SelfAttention,
    TimeEmbed,
    TransformerBlock,
)

GENERATION = "generation"
ALIGNMENT = "alignment"


@dataclass(frozen=True)
class BackboneConfig:
    in_channels: int = 12
    base_channels: int = 32
    channel_mult: tuple = (1, 2)
    latent_size: int = 8
    heads: int = 4
    fusion_depth: int = 1   # transformer blocks per attention stage
    mid_depth: int = 2      # mid transformer blocks on the alignment head
    text_dim: int = 64
    text_len: int = 8
    time_dim: int = 128
    groups: int = 8
    ffn_mult: float = 2.0
    timesteps: int = 100

    @property
    def t_mask(self):
        """Image-condition timestep; deliberately outside the training range [1, T]."""
        return self.timesteps + 1

    def __post_init__(self):
        if len(self.channel_mult) != 2:
            raise ConfigError("channel_mult must have exactly two entries (two resolutions)")
        for m in self.channel_mult:
            ch = self.base_channels * m
            if ch % self.groups:
                raise ConfigError(f"channels {ch} not divisible by groups {self.groups}")
            if ch % self.heads:
                raise ConfigError(f"channels {ch} not divisible by heads {self.heads}")
        if self.text_dim % self.heads:
            raise ConfigError(f"text_dim {self.text_dim} not divisible by heads {self.heads}")
        if self.latent_size % 2:
            raise ConfigError("latent_size must be even (one 2x downsample)")
        assert not (1 <= self.t_mask <= self.timesteps)


class FusionTransformerBlock(Module):
    """Shared self-attention over [image tokens; query token], cross-attention
    to c on image tokens only (the query token bypasses it), and
    modality-specific FFNs."""

    def __init__(self, dim, ctx_dim, heads, ffn_mult, rng, dtype=np.float32):
        self.ln1 = LayerNorm(dim, dtype=dtype)
        self.attn = SelfAttention(dim, heads, rng, dtype)
        self.ln2 = LayerNorm(dim, dtype=dtype)
        self.cross = CrossAttention(dim, ctx_dim, heads, rng, dtype)
        self.ln3 = LayerNorm(dim, dtype=dtype)
        self.ffn_img = FeedForward(dim, ffn_mult, rng, dtype)
        self.ffn_qry = FeedForward(dim, ffn_mult, rng, dtype)

    def __call__(self, tok, c, diag_zero_self_attn=False):
        n_img = tok.shape[1] - 1
        sa = self.attn(self.ln1(tok))
        if diag_zero_self_attn:
            sa = ad.mul(sa, 0.0)
        tok = ad.add(tok, sa)
        img = ad.slice_axis(tok, 1, 0, n_img)
        qry = ad.slice_axis(tok, 1, n_img, n_img + 1)
        img = ad.add(img, self.cross(self.ln2(img), c))
        u = self.ln3(ad.concat([img, qry], 1))
        img = ad.add(img, self.ffn_img(ad.slice_axis(u, 1, 0, n_img)))
        qry = ad.add(qry, self.ffn_qry(ad.slice_axis(u, 1, n_img, n_img + 1)))
        return ad.concat([img, qry], 1)


class DualStreamBlock(Module):
    """One attention stage: image tokens and the projected query token pass
    the fusion transformer blocks; the image stream is residual, the query
    stream is re-projected to text width for the cross-block skip."""

    def __init__(self, channels, cfg, rng, dtype=np.float32):
        self.gn = GroupNorm(cfg.groups, channels, dtype=dtype)
        self.proj_in = Linear(channels, channels, rng, dtype)
        self.q_in = Linear(cfg.text_dim, channels, rng, dtype)
        self.blocks = ModuleList([
            FusionTransformerBlock(channels, cfg.text_dim, cfg.heads,
                                   cfg.ffn_mult, rng, dtype)
            for _ in range(cfg.fusion_depth)
        ])
        self.q_out = Linear(channels, cfg.text_dim, rng, dtype)
        self.proj_out = Linear(channels, channels, rng, dtype)

    def __call__(self, x, q_stream, c, diag_zero_self_attn=False):
        b, h, w, ch = x.shape
        t = ad.reshape(self.gn(x), (b, h * w, ch))
        tok = ad.concat([self.proj_in(t), self.q_in(q_stream)], 1)
        for blk in self.blocks:
            tok = blk(tok, c, diag_zero_self_attn)
        img = ad.slice_axis(tok, 1, 0, h * w)
        qry = ad.slice_axis(tok, 1, h * w, h * w + 1)
        img = ad.reshape(self.proj_out(img), (b, h, w, ch))
        return ad.add(x, img), self.q_out(qry)


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, rng, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        c1 = cfg.base_channels * cfg.channel_mult[0]
        c2 = cfg.base_channels * cfg.channel_mult[1]
        dy = cfg.text_dim

        self.time_mlp = TimeEmbed(cfg.time_dim, rng, dtype)
        # cross-block skip: noised text query + its time condition, text width
        self.e_proj = Linear(dy, dy, rng, dtype)
        self.e_time_proj = Linear(cfg.time_dim, dy, rng, dtype)

        self.in_conv = Conv2d(cfg.in_channels, c1, 3, rng, pad=1, dtype=dtype)
        self.d8_res = ResBlock(c1, c1, cfg.time_dim, cfg.groups, rng, dtype)
        self.d8_fuse = DualStreamBlock(c1, cfg, rng, dtype)
        # kernel 4 keeps the strided output extent integral (no floor semantics)
        self.down = Conv2d(c1, c2, 4, rng, stride=2, pad=1, dtype=dtype)
        self.d4_res = ResBlock(c2, c2, cfg.time_dim, cfg.groups, rng, dtype)
        self.d4_fuse = DualStreamBlock(c2, cfg, rng, dtype)
        self.mid_res1 = ResBlock(c2, c2, cfg.time_dim, cfg.groups, rng, dtype)
        self.mid_fuse = DualStreamBlock(c2, cfg, rng, dtype)
        self.mid_res2 = ResBlock(c2, c2, cfg.time_dim, cfg.groups, rng, dtype)
        self.u4_res = ResBlock(2 * c2, c2, cfg.time_dim, cfg.groups, rng, dtype)
        self.u4_fuse = DualStreamBlock(c2, cfg, rng, dtype)
        self.up_conv = Conv2d(c2, c1, 3, rng, pad=1, dtype=dtype)
        self.u8_res = ResBlock(2 * c1, c1, cfg.time_dim, cfg.groups, rng, dtype)
        self.u8_fuse = DualStreamBlock(c1, cfg, rng, dtype)
        self.out_norm = GroupNorm(cfg.groups, c1, dtype=dtype)
        self.out_conv = Conv2d(c1, cfg.in_channels, 3, rng, pad=1, dtype=dtype)

        # alignment-head extras
        self.mid_query_in = Linear(dy, c2, rng, dtype)
        self.mid_blocks = ModuleList([
            TransformerBlock(c2, cfg.heads, cfg.ffn_mult, rng, dtype)
            for _ in range(cfg.mid_depth)
        ])
        self.mid_ln = LayerNorm(c2, dtype=dtype)
        self.predictor = Linear(c2, dy, rng, dtype)

        self._c_null = None

    def set_null_condition(self, c_null):
        """Store the encoded empty caption (L x d_y) used when c is masked."""
        c_null = np.asarray(c_null, dtype=self.dtype)
        if c_null.shape != (self.cfg.text_len, self.cfg.text_dim):
            raise ShapeError(f"c_null shape {c_null.shape} != "
                             f"({self.cfg.text_len}, {self.cfg.text_dim})")
        self._c_null = c_null

    # --- forward paths -----------------------------------------------------

    def unified(self, z, t_img, c=None, e_t=None, t_e=None, mode=GENERATION,
                diag_zero_self_attn=False):
        """Masked unified forward. In generation mode any supplied (e_t, t_e)
        is ignored (the query stream starts from zero); in alignment mode any
        supplied c is ignored (cross-attention sees the null caption)."""
        cfg = self.cfg
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=self.dtype))
        b = z.shape[0]
        t_img = np.asarray(t_img)
        temb = self.time_mlp(t_img)

        if mode == GENERATION:
            if ((t_img < 1) | (t_img > cfg.timesteps)).any():
                raise ConfigError(f"generation timestep outside [1, {cfg.timesteps}]")
            if c is None:
                raise ShapeError("generation requires a text condition c")
            c_used = c if isinstance(c, Tensor) else Tensor(np.asarray(c, dtype=self.dtype))
            if c_used.shape != (b, cfg.text_len, cfg.text_dim):
                raise ShapeError(f"c shape {c_used.shape} != "
                                 f"({b}, {cfg.text_len}, {cfg.text_dim})")
            e_skip = None
        elif mode == ALIGNMENT:
            if self._c_null is None:
                raise ConfigError("null condition not set; call set_null_condition first")
            if e_t is None or t_e is None:
                raise ShapeError("alignment requires the noised query e_t and t_e")
            t_e = np.asarray(t_e)
            if ((t_e < 1) | (t_e > cfg.timesteps)).any():
                raise ConfigError(f"alignment timestep outside [1, {cfg.timesteps}]")
            c_used = Tensor(np.broadcast_to(self._c_null, (b,) + self._c_null.shape))
            e_t = e_t if isinstance(e_t, Tensor) else Tensor(np.asarray(e_t, dtype=self.dtype))
            if e_t.shape != (b, 1, cfg.text_dim):
                raise ShapeError(f"e_t shape {e_t.shape} != ({b}, 1, {cfg.text_dim})")
            e_skip = ad.add(self.e_proj(e_t),
                            ad.reshape(self.e_time_proj(self.time_mlp(t_e)),
                                       (b, 1, cfg.text_dim)))
        else:
            raise ConfigError(f"unknown mode {mode!r}")

        h_e = Tensor(np.zeros((b, 1, cfg.text_dim), dtype=self.dtype))

        def q_stream():
            return h_e if e_skip is None else ad.add(h_e, e_skip)

        x = self.in_conv(z)
        x = self.d8_res(x, temb)
        x, h_e = self.d8_fuse(x, q_stream(), c_used, diag_zero_self_attn)
        skip8 = x
        x = self.down(x)
        x = self.d4_res(x, temb)
        x, h_e = self.d4_fuse(x, q_stream(), c_used, diag_zero_self_attn)
        skip4 = x
        m = self.mid_res1(x, temb)
        m, h_e = self.mid_fuse(m, q_stream(), c_used, diag_zero_self_attn)
        m = self.mid_res2(m, temb)

        if mode == ALIGNMENT:
            bb, h, w, ch = m.shape
            tokens = ad.reshape(m, (bb, h * w, ch))
            tok = ad.concat([tokens, self.mid_query_in(h_e)], 1)
            for blk in self.mid_blocks:
                tok = blk(tok)
            qry = ad.slice_axis(tok, 1, h * w, h * w + 1)
            return ad.reshape(self.predictor(self.mid_ln(qry)), (bb, cfg.text_dim))

        x = self.u4_res(ad.concat([m, skip4], 3), temb)
        x, h_e = self.u4_fuse(x, q_stream(), c_used, diag_zero_self_attn)
        x = self.up_conv(ad.upsample_nearest2x_nhwc(x))
        x = self.u8_res(ad.concat([x, skip8], 3), temb)
        x, h_e = self.u8_fuse(x, q_stream(), c_used, diag_zero_self_attn)
        return self.out_conv(ad.silu(self.out_norm(x)))

    def forward_generation(self, z_t, t_z, c):
        """Noise prediction for the image head; the text query is masked."""
        return self.unified(z_t, t_z, c=c, mode=GENERATION)

    def forward_alignment(self, z, e_t, t_e):
        """Clean-query prediction for the alignment head; c is masked and the
        clean latent enters at the mask timestep."""
        b = np.asarray(z).shape[0]
        t_img = np.full(b, self.cfg.t_mask, dtype=np.int64)
        return self.unified(z, t_img, e_t=e_t, t_e=t_e, mode=ALIGNMENT)

    # --- parameter census ----------------------------------------------------

    def parameter_partition(self):
        """Name sets: shared_trunk (both losses reach them), generation_only
        (decoder half), scratch (the enlarged-lr group: query projections,
        query FFNs, mid transformer, predictor), and its alignment_only subset
        (zero gradient whenever the alignment loss is off)."""
        align_prefixes = ("e_proj.", "e_time_proj.", "mid_query_in.",
                          "mid_blocks.", "mid_ln.", "predictor.")
        gen_prefixes = ("u4_res.", "u4_fuse.", "up_conv.", "u8_res.", "u8_fuse.",
                        "out_norm.", "out_conv.")
        query_parts = (".q_in.", ".q_out.", ".ffn_qry.")

        part = {"shared_trunk": [], "generation_only": [], "scratch": [],
                "alignment_only": []}
        for name, _ in self.named_parameters():
            if name.startswith(align_prefixes):
                part["alignment_only"].append(name)
                part["scratch"].append(name)
            elif any(q in name for q in query_parts):
                part["scratch"].append(name)
            elif name.startswith(gen_prefixes):
                part["generation_only"].append(name)
            else:
                part["shared_trunk"].append(name)
        return part

    def state_dict(self):
        return {f"backbone.{k}": v.data for k, v in self.named_parameters()}

    def load_state_dict(self, state):
        for k, p in self.named_parameters():
            src = state[f"backbone.{k}"]
            if src.shape != p.data.shape:
                raise ShapeError(f"parameter {k}: checkpoint shape {src.shape} "
                                 f"!= model shape {p.data.shape}")
            p.data = src.astype(self.dtype)
