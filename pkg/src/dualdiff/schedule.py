"""Noise schedules and the closed-form diffusion / denoising algebra.

Timesteps are 1-based: t in {1..T} for training draws, with alpha_bar(0) = 1
by convention so the final deterministic sampling transition t -> 0 is well
defined. The same algebra serves the image path and the text-embedding path
(the latter additionally scaled by gamma at noising time).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class NoiseSchedule:
    """beta/alpha/alpha-bar tables for a fixed horizon T (float64)."""

    kind: str
    T: int
    betas: np.ndarray          # (T,), betas[t-1] = beta_t
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError(f"schedule needs T >= 1, got {self.T}")
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.shape != (self.T,):
            raise ConfigError(f"betas shape {betas.shape} != ({self.T},)")
        if not ((betas > 0.0) & (betas < 1.0)).all():
            raise ConfigError("betas must lie strictly inside (0, 1)")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", 1.0 - betas)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - betas))

    def alpha_bar(self, t):
        """alpha-bar at integer t (scalar or array), with alpha_bar(0) = 1."""
        t = np.asarray(t)
        if ((t < 0) | (t > self.T)).any():
            raise ConfigError(f"timestep {t} outside [0, {self.T}]")
        padded = np.concatenate([[1.0], self.alpha_bars])
        out = padded[t]
        return float(out) if out.ndim == 0 else out


def make_linear(T, beta_start=8.5e-4, beta_end=1.2e-2):
    """Linear beta ramp, inclusive of both endpoints."""
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if T == 1:
        betas = np.array([beta_start])
    else:
        betas = np.linspace(beta_start, beta_end, T)
    return NoiseSchedule("linear", T, betas)


def make_cosine(T, s=0.008):
    """Squared-cosine alpha-bar curve; betas derived and clipped to <= 0.999."""
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    u = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((u / T) + s) / (1.0 + s) * math.pi / 2.0) ** 2
    bars = f / f[0]
    betas = np.clip(1.0 - bars[1:] / bars[:-1], 1e-12, 0.999)
    return NoiseSchedule("cosine", T, betas)


def _coeff(values, like):
    """Shape per-sample schedule coefficients for broadcasting against `like`."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 0:
        return float(v)
    return v.reshape(v.shape + (1,) * (like.ndim - 1)).astype(like.dtype)


def _check_t(t, sched):
    t = np.asarray(t)
    if ((t < 1) | (t > sched.T)).any():
        raise ConfigError(f"timestep {t} outside [1, {sched.T}]")
    return t


def q_sample_image(z0, t, eps, sched):
    """z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps."""
    t = _check_t(t, sched)
    if eps.shape != z0.shape:
        raise ConfigError(f"noise shape {eps.shape} != signal shape {z0.shape}")
    ab = sched.alpha_bars[t - 1]
    return _coeff(np.sqrt(ab), z0) * z0 + _coeff(np.sqrt(1.0 - ab), z0) * eps


def q_sample_text(e0, t, eps, gamma, sched):
    """e_t = gamma sqrt(abar_t) e0 + sqrt(1 - abar_t) eps."""
    if not (0.0 < gamma <= 1.0):
        raise ConfigError(f"gamma must lie in (0, 1], got {gamma}")
    t = _check_t(t, sched)
    ab = sched.alpha_bars[t - 1]
    return _coeff(gamma * np.sqrt(ab), e0) * e0 + _coeff(np.sqrt(1.0 - ab), e0) * eps


def data_to_noise(e_t, e0_hat, t, sched):
    """Invert q_sample given a clean-signal estimate:
    eps_hat = (e_t - sqrt(abar_t) e0_hat) / sqrt(1 - abar_t)."""
    t = _check_t(t, sched)
    ab = sched.alpha_bars[t - 1]
    return (e_t - _coeff(np.sqrt(ab), e_t) * e0_hat) / _coeff(np.sqrt(1.0 - ab), e_t)


def ddim_step(x_t, eps_hat, t, t_prev, sched):
    """Deterministic (eta=0) reverse update from t to t_prev < t.

    x_prev = sqrt(abar_prev) (x_t - sqrt(1-abar_t) eps_hat) / sqrt(abar_t)
             + sqrt(1 - abar_prev) eps_hat
    Identical formula for the image and text paths.
    """
    if not (0 <= t_prev < t <= sched.T):
        raise ConfigError(f"need 0 <= t_prev < t <= T, got t={t}, t_prev={t_prev}")
    ab_t = sched.alpha_bar(int(t))
    ab_p = sched.alpha_bar(int(t_prev))
    x0_pred = (x_t - math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(ab_t)
    return math.sqrt(ab_p) * x0_pred + math.sqrt(1.0 - ab_p) * eps_hat


def select_timesteps(T, S):
    """S evenly spaced sampling timesteps, strictly descending from T.

    The final transition targets t=0. Matches the ceil(T/S)-stride spacing on
    divisible horizons (e.g. T=100, S=4 -> [100, 75, 50, 25]).
    """
    if not (1 <= S <= T):
        raise ConfigError(f"need 1 <= S <= T, got S={S}, T={T}")
    ts = np.round(np.linspace(T, T / S, S)).astype(int)
    if S > 1 and not (np.diff(ts) < 0).all():
        raise ConfigError(f"degenerate timestep spacing for T={T}, S={S}")
    return [int(t) for t in ts]
