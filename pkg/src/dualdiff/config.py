"""Run configuration: flat ``key = value`` text files with typed validation.

Unknown keys are rejected by name; every value is range-checked at load.
Defaults follow the recorded toy recipe (T=100, gamma=0.01, lambda=1,
logit_scale=1, 10% condition dropout, EMA 0.9999, B=64, 5000 steps).
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .errors import ConfigError


def _parse_mult(v):
    try:
        parts = tuple(int(x) for x in str(v).replace("(", "").replace(")", "").split(","))
    except ValueError as exc:
        raise ConfigError(f"channel_mult must be comma-separated ints, got {v!r}") from exc
    return parts


@dataclass(frozen=True)
class RunConfig:
    # diffusion
    timesteps: int = 100
    image_schedule: str = "linear"
    text_schedule: str = "cosine"
    beta_start: float = 8.5e-4
    beta_end: float = 1.2e-2
    cosine_s: float = 0.008
    gamma: float = 0.01
    # objectives
    lambda_ita: float = 1.0
    logit_scale: float = 1.0
    text_target: str = "data"
    # training
    batch_size: int = 64
    max_steps: int = 5000
    base_lr: float = 1e-4
    scratch_lr_mult: float = 1.0
    warmup_steps: int = 200
    weight_decay: float = 1e-4
    ema_decay: float = 0.9999
    cond_dropout: float = 0.1
    grad_clip: float = 1.0
    tasks: str = "hybrid"
    seed: int = 0
    encoder_seed: int = 0
    checkpoint_every: int = 1000
    # backbone
    base_channels: int = 32
    channel_mult: tuple = (1, 2)
    heads: int = 4
    fusion_depth: int = 1
    mid_depth: int = 2
    text_dim: int = 64
    time_dim: int = 128
    groups: int = 8
    ffn_mult: float = 2.0
    # sampler defaults
    sample_steps: int = 50
    sample_guidance: float = 3.0
    eval_steps: int = 8
    eval_guidance: float = 3.0
    # dataset
    train_size: int = 1200
    val_size: int = 120
    test_size: int = 600

    @property
    def t_mask(self):
        return self.timesteps + 1


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}

_CHOICES = {
    "image_schedule": ("linear", "cosine"),
    "text_schedule": ("linear", "cosine"),
    "text_target": ("data", "noise"),
    "tasks": ("hybrid", "generation", "alignment"),
}


def _check(cfg: RunConfig):
    def req(ok, key, msg):
        if not ok:
            raise ConfigError(f"config key '{key}': {msg}")

    req(cfg.timesteps >= 1, "timesteps", "must be >= 1")
    for key, choices in _CHOICES.items():
        req(getattr(cfg, key) in choices, key, f"must be one of {choices}")
    req(0.0 < cfg.beta_start <= cfg.beta_end < 1.0, "beta_start",
        "need 0 < beta_start <= beta_end < 1")
    req(cfg.cosine_s > 0, "cosine_s", "must be > 0")
    req(0.0 < cfg.gamma <= 1.0, "gamma", "must lie in (0, 1]")
    req(cfg.lambda_ita >= 0, "lambda_ita", "must be >= 0")
    req(cfg.logit_scale > 0, "logit_scale", "must be > 0")
    req(cfg.batch_size >= 1, "batch_size", "must be >= 1")
    req(cfg.max_steps >= 0, "max_steps", "must be >= 0")
    req(cfg.base_lr > 0, "base_lr", "must be > 0")
    req(cfg.scratch_lr_mult > 0, "scratch_lr_mult", "must be > 0")
    req(cfg.warmup_steps >= 0, "warmup_steps", "must be >= 0")
    req(cfg.weight_decay >= 0, "weight_decay", "must be >= 0")
    req(0.0 <= cfg.ema_decay < 1.0, "ema_decay", "must lie in [0, 1)")
    req(0.0 <= cfg.cond_dropout < 1.0, "cond_dropout", "must lie in [0, 1)")
    req(cfg.grad_clip >= 0, "grad_clip", "must be >= 0 (0 disables clipping)")
    req(cfg.seed >= 0, "seed", "must be >= 0")
    req(cfg.encoder_seed >= 0, "encoder_seed", "must be >= 0")
    req(cfg.checkpoint_every >= 0, "checkpoint_every", "must be >= 0")
    req(cfg.fusion_depth >= 1, "fusion_depth", "must be >= 1")
    req(cfg.mid_depth >= 1, "mid_depth", "must be >= 1")
    req(cfg.ffn_mult > 0, "ffn_mult", "must be > 0")
    req(1 <= cfg.sample_steps <= cfg.timesteps, "sample_steps",
        "must lie in [1, timesteps]")
    req(1 <= cfg.eval_steps <= cfg.timesteps, "eval_steps",
        "must lie in [1, timesteps]")
    req(cfg.sample_guidance >= 0, "sample_guidance", "must be >= 0")
    req(cfg.eval_guidance >= 0, "eval_guidance", "must be >= 0")
    for key in ("train_size", "val_size", "test_size"):
        val = getattr(cfg, key)
        req(val > 0 and val % 12 == 0, key,
            "must be a positive multiple of 12 (exact class balance)")
    # backbone divisibility checks live in BackboneConfig
    from .backbone import BackboneConfig
    BackboneConfig(
        base_channels=cfg.base_channels, channel_mult=cfg.channel_mult,
        heads=cfg.heads, fusion_depth=cfg.fusion_depth, mid_depth=cfg.mid_depth,
        text_dim=cfg.text_dim, time_dim=cfg.time_dim, groups=cfg.groups,
        ffn_mult=cfg.ffn_mult, timesteps=cfg.timesteps,
    )
    return cfg


def parse_config_text(text, base=None):
    cfg_kwargs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key '{key}'")
        if key == "channel_mult":
            cfg_kwargs[key] = _parse_mult(value)
            continue
        ftype = _FIELD_TYPES[key]
        try:
            if ftype in (int, "int"):
                cfg_kwargs[key] = int(value)
            elif ftype in (float, "float"):
                cfg_kwargs[key] = float(value)
            else:
                cfg_kwargs[key] = value
        except ValueError as exc:
            raise ConfigError(f"config key '{key}': cannot parse {value!r}") from exc
    cfg = replace(base or RunConfig(), **cfg_kwargs)
    return _check(cfg)


def load_config(path, base=None):
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base=base)


def config_to_text(cfg: RunConfig):
    lines = []
    for f in fields(RunConfig):
        val = getattr(cfg, f.name)
        if f.name == "channel_mult":
            val = ",".join(str(v) for v in val)
        elif isinstance(val, float):
            val = repr(val)
        lines.append(f"{f.name} = {val}")
    return "\n".join(lines) + "\n"


def make_config(**overrides):
    """Validated config from keyword overrides (test/CLI convenience)."""
    if "channel_mult" in overrides and isinstance(overrides["channel_mult"], str):
        overrides["channel_mult"] = _parse_mult(overrides["channel_mult"])
    return _check(replace(RunConfig(), **overrides))
