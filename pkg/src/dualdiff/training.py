"""Unified masked training loop: per-sample condition dropout, AdamW with a
scratch-parameter lr multiplier, linear warmup, gradient clipping, and EMA.

One rng stream drives each step in a documented draw order so determinism
survives refactors: epoch shuffle (at epoch boundaries) -> timesteps (t_z,
then t_e) -> noises (eps_z, then eps_e) -> dropout coins (text, then image).
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import objectives
from .autodiff import Tape, Tensor
from .checkpoint import save_checkpoint
from .config import RunConfig
from .errors import ConfigError
from .model import ModelBundle, build_model
from .schedule import q_sample_image, q_sample_text


@dataclass
class TrainBatch:
    images: np.ndarray      # (B,16,16,3) in [-1,1]
    token_ids: np.ndarray   # (B,L)


@dataclass
class StepReport:
    l_ig: float
    l_ita: float
    l_total: float
    grad_norm: float
    lr: float


class AdamW:
    """Decoupled-weight-decay Adam with linear warmup then constant lr."""

    def __init__(self, named_params, base_lr, scratch_names=(), scratch_mult=1.0,
                 warmup_steps=0, weight_decay=1e-4,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = []
        scratch = set(scratch_names)
        for name, p in named_params:
            mult = scratch_mult if name in scratch else 1.0
            self.params.append((name, p, mult,
                                np.zeros_like(p.data), np.zeros_like(p.data)))
        self.base_lr = base_lr
        self.warmup_steps = warmup_steps
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0

    def lr_at(self, step):
        if self.warmup_steps > 0:
            return self.base_lr * min(1.0, step / self.warmup_steps)
        return self.base_lr

    def step(self):
        self.step_count += 1
        t = self.step_count
        lr = self.lr_at(t)
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** t
        bc2 = 1.0 - b2 ** t
        for _, p, mult, m, v in self.params:
            g = p.grad
            if g is None:
                g = 0.0
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g if isinstance(g, np.ndarray) else 0.0)
            step_lr = lr * mult
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= step_lr * update
            if self.weight_decay:
                p.data -= step_lr * self.weight_decay * p.data

    def zero_grad(self):
        for _, p, *_ in self.params:
            p.grad = None


def clip_grad_norm(params, max_norm):
    """Scale gradients to a global L2 norm of max_norm; returns the pre-clip norm."""
    total = 0.0
    grads = []
    for p in params:
        if p.grad is not None:
            grads.append(p.grad)
            total += float(np.dot(p.grad.ravel(), p.grad.ravel()))
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


class Ema:
    """Shadow copy of every trainable parameter, updated every step:
    shadow <- decay * shadow + (1 - decay) * param."""

    def __init__(self, named_params, decay):
        self.decay = decay
        self.shadow = {name: p.data.copy() for name, p in named_params}

    def update(self, named_params):
        d = self.decay
        for name, p in named_params:
            s = self.shadow[name]
            s *= d
            s += (1.0 - d) * p.data

    def state_dict(self, prefix="backbone."):
        return {f"{prefix}{k}": v for k, v in self.shadow.items()}


def dropout_coins(rng, b, p=0.1):
    """Independent Bernoulli(p) masks per sample: (text_drop, image_drop)."""
    if not (0.0 <= p < 1.0):
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    text_drop = rng.random(b) < p
    image_drop = rng.random(b) < p
    return text_drop, image_drop


def _masked_condition(c, text_drop, c_null):
    if not text_drop.any():
        return c
    out = c.copy()
    out[text_drop] = c_null
    return out


def _masked_latent(z0, image_drop):
    if not image_drop.any():
        return z0
    out = z0.copy()
    out[image_drop] = 0.0
    return out


def train_step(batch: TrainBatch, bundle: ModelBundle, opt: AdamW, ema: Ema, rng,
               sched_img=None, sched_txt=None) -> StepReport:
    """One unified step: independent per-sample timesteps and noises, masked
    generation and alignment passes, one optimizer step, one EMA update."""
    cfg = bundle.config
    sched_img = sched_img or bundle.sched_img
    sched_txt = sched_txt or bundle.sched_txt
    backbone = bundle.backbone
    b = batch.images.shape[0]
    run_gen = cfg.tasks in ("hybrid", "generation")
    run_align = cfg.tasks in ("hybrid", "alignment")

    z0 = bundle.codec.encode(batch.images)
    c, e = bundle.text_encoder.encode_ids(batch.token_ids)

    t_z = rng.integers(1, cfg.timesteps + 1, b)
    t_e = rng.integers(1, cfg.timesteps + 1, b)
    eps_z = rng.standard_normal(z0.shape, dtype=np.float32)
    eps_e = rng.standard_normal((b, 1, cfg.text_dim), dtype=np.float32)
    text_drop, image_drop = dropout_coins(rng, b, cfg.cond_dropout)

    z_t = q_sample_image(z0, t_z, eps_z, sched_img)
    e0 = e[:, None, :]
    e_t = q_sample_text(e0, t_e, eps_e, cfg.gamma, sched_txt)

    with Tape() as tape:
        if run_gen:
            c_used = _masked_condition(c, text_drop, bundle.text_encoder.null_condition())
            eps_hat = backbone.forward_generation(z_t, t_z, c_used)
            l_ig = objectives.loss_ig(eps_z, eps_hat)
        else:
            l_ig = Tensor(np.float32(0.0))
        if run_align:
            z_cond = _masked_latent(z0, image_drop)
            pred = backbone.forward_alignment(z_cond, e_t, t_e)
            if cfg.text_target == "noise":
                ab = sched_txt.alpha_bars[t_e - 1]
                sq_ab = Tensor(np.sqrt(ab)[:, None].astype(np.float32))
                sq_1m = Tensor(np.sqrt(1.0 - ab)[:, None].astype(np.float32))
                e_t_flat = Tensor(e_t.reshape(b, cfg.text_dim))
                e0_hat = ad.div(ad.sub(e_t_flat, ad.mul(sq_1m, pred)), sq_ab)
            else:
                e0_hat = pred
            s = objectives.similarity(e0_hat, e, cfg.logit_scale)
            l_ita = objectives.loss_ita(s)
        else:
            l_ita = Tensor(np.float32(0.0))
        l_tot = objectives.loss_total(l_ig, l_ita, cfg.lambda_ita)

    vals = (l_ig.item(), l_ita.item(), l_tot.item())
    if not all(math.isfinite(v) for v in vals):
        raise RuntimeError(
            f"non-finite loss at optimizer step {opt.step_count + 1}: "
            f"l_ig={vals[0]}, l_ita={vals[1]}, l_total={vals[2]}")

    tape.backward(l_tot)
    norm = clip_grad_norm([p for _, p, *_ in opt.params], cfg.grad_clip)
    opt.step()
    opt.zero_grad()
    ema.update(backbone.named_parameters())
    return StepReport(vals[0], vals[1], vals[2], norm, opt.lr_at(opt.step_count))


def make_optimizer(bundle: ModelBundle) -> AdamW:
    cfg = bundle.config
    part = bundle.backbone.parameter_partition()
    return AdamW(list(bundle.backbone.named_parameters()), cfg.base_lr,
                 scratch_names=part["scratch"], scratch_mult=cfg.scratch_lr_mult,
                 warmup_steps=cfg.warmup_steps, weight_decay=cfg.weight_decay)


def train(config: RunConfig, images, token_ids, out_dir, log_every=1,
          progress=None):
    """Run max_steps unified steps over shuffled full minibatches.

    Writes `metrics.log` (one `step l_ig l_ita l_total grad_norm lr` line per
    step), periodic checkpoints, and `ckpt-final.dd`; returns its path.
    """
    os.makedirs(out_dir, exist_ok=True)
    if images.shape[0] < config.batch_size:
        raise ConfigError(f"dataset of {images.shape[0]} records cannot fill "
                          f"a batch of {config.batch_size}")
    bundle = build_model(config)
    _, train_ss = np.random.SeedSequence(config.seed).spawn(2)
    rng = np.random.default_rng(train_ss)
    opt = make_optimizer(bundle)
    ema = Ema(bundle.backbone.named_parameters(), config.ema_decay)

    n = images.shape[0]
    bsz = config.batch_size
    order = None
    cursor = 0
    log_path = os.path.join(out_dir, "metrics.log")
    final_path = os.path.join(out_dir, "ckpt-final.dd")
    started = time.time()
    with open(log_path, "w", encoding="utf-8") as log:
        for step in range(1, config.max_steps + 1):
            if order is None or cursor + bsz > n:
                order = rng.permutation(n)
                cursor = 0
            idx = order[cursor:cursor + bsz]
            cursor += bsz
            batch = TrainBatch(images[idx], token_ids[idx])
            report = train_step(batch, bundle, opt, ema, rng)
            if step % log_every == 0 or step == config.max_steps:
                log.write(f"{step} {report.l_ig:.6f} {report.l_ita:.6f} "
                          f"{report.l_total:.6f} {report.grad_norm:.6f} "
                          f"{report.lr:.8f}\n")
                log.flush()
            if progress is not None:
                progress(step, report)
            if config.checkpoint_every and step % config.checkpoint_every == 0 \
                    and step != config.max_steps:
                save_checkpoint(os.path.join(out_dir, f"ckpt-{step:06d}.dd"),
                                config, step, bundle.state_dict(), ema.state_dict())
        save_checkpoint(final_path, config, config.max_steps,
                        bundle.state_dict(), ema.state_dict())
        log.write(f"# wall_time_s {time.time() - started:.1f}\n")
    return final_path
