"""Deterministic DDIM inference for both heads with classifier-free guidance.

Generation guides the noise prediction; alignment guides the clean-query
prediction (data space) and converts it to noise for the shared DDIM update,
with a final L2 normalization. Both samplers are pure functions of (weights,
inputs, seed, S, w); the unconditional branch costs a second model evaluation
only when w > 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import null_image_condition
from .errors import ConfigError, ShapeError
from .schedule import data_to_noise, ddim_step, select_timesteps


@dataclass(frozen=True)
class GuidanceConfig:
    w: float = 3.0
    steps: int = 8

    def __post_init__(self):
        if not np.isfinite(self.w) or self.w < 0:
            raise ConfigError(f"guidance scale must be finite and >= 0, got {self.w}")
        if self.steps < 1:
            raise ConfigError(f"sampling steps must be >= 1, got {self.steps}")


def guided_combine(cond, uncond, w):
    """(1 + w) * cond - w * uncond."""
    cond = np.asarray(cond)
    uncond = np.asarray(uncond)
    if cond.shape != uncond.shape:
        raise ShapeError(f"guidance operands differ: {cond.shape} vs {uncond.shape}")
    return (1.0 + w) * cond - w * uncond


def _transitions(T, steps):
    ts = select_timesteps(T, steps)
    return list(zip(ts, ts[1:] + [0]))


def sample_images(caption_ids, bundle, g: GuidanceConfig, rng_seed):
    """Batched text-conditional image sampling; (N,16,16,3) in [-1,1]."""
    backbone = bundle.backbone
    cfg = bundle.config
    ids = np.asarray(caption_ids)
    if ids.ndim == 1:
        ids = ids[None]
    n = ids.shape[0]
    c, _ = bundle.text_encoder.encode_ids(ids)
    c_null = np.broadcast_to(bundle.text_encoder.null_condition(), c.shape)
    rng = np.random.default_rng(rng_seed)
    z = rng.standard_normal((n, 8, 8, 12), dtype=np.float32)
    for t, t_prev in _transitions(cfg.timesteps, g.steps):
        t_vec = np.full(n, t)
        eps = backbone.forward_generation(z, t_vec, c).data
        if g.w > 0:
            eps_u = backbone.forward_generation(z, t_vec, c_null).data
            eps = guided_combine(eps, eps_u, g.w)
        z = ddim_step(z, eps, t, t_prev, bundle.sched_img)
    return np.clip(bundle.codec.decode(z), -1.0, 1.0)


def sample_image(caption_ids, bundle, g: GuidanceConfig, rng_seed):
    """Single-caption convenience wrapper around sample_images."""
    return sample_images(np.asarray(caption_ids)[None], bundle, g, rng_seed)[0]


def sample_text_embeddings(images, bundle, g: GuidanceConfig, rng_seed,
                           batch_size=64):
    """Image-conditional query sampling; (N, d_y) unit rows.

    All starting noises are drawn up front so results do not depend on the
    internal batch partitioning.
    """
    backbone = bundle.backbone
    cfg = bundle.config
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[None]
    n = images.shape[0]
    rng = np.random.default_rng(rng_seed)
    e_start = rng.standard_normal((n, 1, cfg.text_dim), dtype=np.float32)
    out = np.empty((n, cfg.text_dim), dtype=np.float32)
    noise_target = cfg.text_target == "noise"
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        z = bundle.codec.encode(images[lo:hi])
        z_null = null_image_condition(hi - lo)
        e = e_start[lo:hi]
        for t, t_prev in _transitions(cfg.timesteps, g.steps):
            t_vec = np.full(hi - lo, t)
            pred = backbone.forward_alignment(z, e, t_vec).data
            if g.w > 0:
                pred_u = backbone.forward_alignment(z_null, e, t_vec).data
                pred = guided_combine(pred, pred_u, g.w)
            pred = pred[:, None, :]
            if noise_target:
                eps = pred
            else:
                eps = data_to_noise(e, pred, t, bundle.sched_txt)
            e = ddim_step(e, eps, t, t_prev, bundle.sched_txt)
        e = e[:, 0, :]
        out[lo:hi] = e / np.maximum(
            np.sqrt((e * e).sum(axis=-1, keepdims=True)), 1e-12)
    return out


def sample_text_embedding(image, bundle, g: GuidanceConfig, rng_seed):
    """Single-image convenience wrapper; returns a unit vector (d_y,)."""
    return sample_text_embeddings(np.asarray(image)[None], bundle, g, rng_seed)[0]
