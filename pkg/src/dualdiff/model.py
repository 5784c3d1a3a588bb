"""Model assembly: frozen encoders + backbone + schedules from one config."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import Backbone, BackboneConfig
from .config import RunConfig
from .encoders import DEFAULT_VOCAB, ImageCodec, TextEncoder
from .schedule import make_cosine, make_linear


def backbone_config(cfg: RunConfig) -> BackboneConfig:
    return BackboneConfig(
        base_channels=cfg.base_channels, channel_mult=cfg.channel_mult,
        heads=cfg.heads, fusion_depth=cfg.fusion_depth, mid_depth=cfg.mid_depth,
        text_dim=cfg.text_dim, time_dim=cfg.time_dim, groups=cfg.groups,
        ffn_mult=cfg.ffn_mult, timesteps=cfg.timesteps,
    )


def schedules_from_config(cfg: RunConfig):
    def build(kind):
        if kind == "linear":
            return make_linear(cfg.timesteps, cfg.beta_start, cfg.beta_end)
        return make_cosine(cfg.timesteps, cfg.cosine_s)

    return build(cfg.image_schedule), build(cfg.text_schedule)


@dataclass
class ModelBundle:
    config: RunConfig
    codec: ImageCodec
    text_encoder: TextEncoder
    backbone: Backbone
    sched_img: object
    sched_txt: object

    def state_dict(self):
        state = {}
        state.update(self.codec.state_dict())
        state.update(self.text_encoder.state_dict())
        state.update(self.backbone.state_dict())
        return state

    def load_state_dict(self, state):
        self.codec.load_state_dict(state)
        self.text_encoder.load_state_dict(state)
        self.backbone.load_state_dict(state)
        self.backbone.set_null_condition(self.text_encoder.null_condition())


def build_model(cfg: RunConfig, dtype=np.float32) -> ModelBundle:
    """Deterministic assembly: encoder weights come from encoder_seed, the
    backbone init from the first spawn of seed (training consumes the second)."""
    enc_rng = np.random.default_rng(cfg.encoder_seed)
    codec = ImageCodec(enc_rng)
    text_encoder = TextEncoder(DEFAULT_VOCAB, enc_rng, dim=cfg.text_dim)
    init_ss, _ = np.random.SeedSequence(cfg.seed).spawn(2)
    backbone = Backbone(backbone_config(cfg), np.random.default_rng(init_ss), dtype)
    backbone.set_null_condition(text_encoder.null_condition())
    sched_img, sched_txt = schedules_from_config(cfg)
    return ModelBundle(cfg, codec, text_encoder, backbone, sched_img, sched_txt)


def bundle_from_checkpoint(path, section="ema"):
    """Rebuild a bundle from a checkpoint. section='ema' overlays the EMA
    weights onto the backbone (the evaluation default); 'raw' keeps the raw
    trained weights."""
    from .checkpoint import load_checkpoint

    ck = load_checkpoint(path, sections=("raw", "ema") if section == "ema" else ("raw",))
    bundle = build_model(ck.config)
    bundle.load_state_dict(ck.raw)
    if section == "ema":
        for name, p in bundle.backbone.named_parameters():
            key = f"backbone.{name}"
            if key in ck.ema:
                p.data = ck.ema[key].astype(np.float32)
    return bundle, ck
