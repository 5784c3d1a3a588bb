"""Finite-difference verification of the autodiff backward rules.

Two layers: a per-op suite (each differentiable op against central
differences over many seeds, float64) and an end-to-end check of the full
training objective on a sub-500-parameter micro-model built from the real
fusion-block machinery. A deliberately broken op serves as the negative
control for the checker itself.
"""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np

from . import autodiff as ad
from . import objectives
from .autodiff import Tape, Tensor, finite_diff_check
from .backbone import DualStreamBlock
from .nn import Conv2d, Linear, Module, TimeEmbed
from .schedule import make_cosine, make_linear, q_sample_image, q_sample_text

F64 = np.float64


def _r(rng, *shape):
    return rng.standard_normal(shape)


OP_CASES = {}


def _case(name):
    def deco(fn):
        OP_CASES[name] = fn
        return fn
    return deco


@_case("matmul.a")
def _(rng):
    b = Tensor(_r(rng, 3, 4))
    m = Tensor(_r(rng, 5, 4))
    return lambda x: ad.sum_(ad.mul(ad.matmul(x, b), m)), _r(rng, 5, 3)


@_case("matmul.b")
def _(rng):
    a = Tensor(_r(rng, 4, 3))
    w = Tensor(_r(rng, 4, 5))
    return lambda x: ad.sum_(ad.mul(ad.matmul(a, x), w)), _r(rng, 3, 5)


@_case("matmul.batched")
def _(rng):
    b = Tensor(_r(rng, 2, 3, 4))
    m = Tensor(_r(rng, 2, 5, 4))
    return lambda x: ad.sum_(ad.mul(ad.matmul(x, b), m)), _r(rng, 2, 5, 3)


@_case("conv2d.x")
def _(rng):
    w = Tensor(_r(rng, 3, 2, 3, 3))
    m = Tensor(_r(rng, 1, 3, 4, 4))
    return lambda x: ad.sum_(ad.mul(ad.conv2d(x, w, stride=1, pad=1), m)), _r(rng, 1, 2, 4, 4)


@_case("conv2d.w")
def _(rng):
    x = Tensor(_r(rng, 2, 2, 5, 5))
    m = Tensor(_r(rng, 2, 3, 2, 2))
    return lambda w: ad.sum_(ad.mul(ad.conv2d(x, w, stride=2, pad=0), m)), _r(rng, 3, 2, 3, 3)


@_case("conv2d.bias")
def _(rng):
    x = Tensor(_r(rng, 2, 2, 4, 4))
    w = Tensor(_r(rng, 3, 2, 3, 3))
    m = Tensor(_r(rng, 2, 3, 4, 4))
    return lambda b: ad.sum_(ad.mul(ad.conv2d(x, w, b, pad=1), m)), _r(rng, 3)


@_case("conv2d_nhwc.x")
def _(rng):
    w = Tensor(_r(rng, 3, 2, 3, 3))
    m = Tensor(_r(rng, 1, 4, 4, 3))
    return lambda x: ad.sum_(ad.mul(ad.conv2d_nhwc(x, w, stride=1, pad=1), m)), _r(rng, 1, 4, 4, 2)


@_case("conv2d_nhwc.w")
def _(rng):
    x = Tensor(_r(rng, 2, 6, 6, 2))
    m = Tensor(_r(rng, 2, 3, 3, 3))
    return lambda w: ad.sum_(ad.mul(ad.conv2d_nhwc(x, w, stride=2, pad=1), m)), _r(rng, 3, 2, 4, 4)


@_case("group_norm_nhwc.x")
def _(rng):
    g = Tensor(_r(rng, 4))
    b = Tensor(_r(rng, 4))
    m = Tensor(_r(rng, 2, 3, 3, 4))
    return lambda x: ad.sum_(ad.mul(ad.group_norm_nhwc(x, 2, g, b), m)), _r(rng, 2, 3, 3, 4)


@_case("upsample_nearest2x_nhwc")
def _(rng):
    m = Tensor(_r(rng, 1, 4, 4, 2))
    return lambda x: ad.sum_(ad.mul(ad.upsample_nearest2x_nhwc(x), m)), _r(rng, 1, 2, 2, 2)


@_case("softmax")
def _(rng):
    m = Tensor(_r(rng, 5))
    return lambda x: ad.sum_(ad.mul(ad.softmax(x, axis=-1), m)), _r(rng, 5)


@_case("softmax.matrix")
def _(rng):
    m = Tensor(_r(rng, 3, 4))
    return lambda x: ad.sum_(ad.mul(ad.softmax(x, axis=0), m)), _r(rng, 3, 4)


@_case("logsumexp")
def _(rng):
    m = Tensor(_r(rng, 3, 1))
    return lambda x: ad.sum_(ad.mul(ad.logsumexp(x, axis=-1), m)), _r(rng, 3, 4)


@_case("layer_norm.x")
def _(rng):
    g = Tensor(_r(rng, 6))
    b = Tensor(_r(rng, 6))
    m = Tensor(_r(rng, 2, 6))
    return lambda x: ad.sum_(ad.mul(ad.layer_norm(x, g, b), m)), _r(rng, 2, 6)


@_case("layer_norm.gain")
def _(rng):
    x = Tensor(_r(rng, 2, 6))
    b = Tensor(_r(rng, 6))
    m = Tensor(_r(rng, 2, 6))
    return lambda g: ad.sum_(ad.mul(ad.layer_norm(x, g, b), m)), _r(rng, 6)


@_case("group_norm.x")
def _(rng):
    g = Tensor(_r(rng, 4))
    b = Tensor(_r(rng, 4))
    m = Tensor(_r(rng, 2, 4, 3, 3))
    return lambda x: ad.sum_(ad.mul(ad.group_norm(x, 2, g, b), m)), _r(rng, 2, 4, 3, 3)


@_case("group_norm.gain")
def _(rng):
    x = Tensor(_r(rng, 2, 4, 3, 3))
    b = Tensor(_r(rng, 4))
    m = Tensor(_r(rng, 2, 4, 3, 3))
    return lambda g: ad.sum_(ad.mul(ad.group_norm(x, 2, g, b), m)), _r(rng, 4)


@_case("l2_normalize")
def _(rng):
    m = Tensor(_r(rng, 2, 5))
    return lambda x: ad.sum_(ad.mul(ad.l2_normalize(x, axis=-1), m)), _r(rng, 2, 5)


@_case("silu")
def _(rng):
    m = Tensor(_r(rng, 7))
    return lambda x: ad.sum_(ad.mul(ad.silu(x), m)), _r(rng, 7)


@_case("exp")
def _(rng):
    m = Tensor(_r(rng, 6))
    return lambda x: ad.sum_(ad.mul(ad.exp(x), m)), _r(rng, 6)


@_case("log")
def _(rng):
    m = Tensor(_r(rng, 6))
    return lambda x: ad.sum_(ad.mul(ad.log(x), m)), np.abs(_r(rng, 6)) + 0.5


@_case("sqrt")
def _(rng):
    m = Tensor(_r(rng, 6))
    return lambda x: ad.sum_(ad.mul(ad.sqrt(x), m)), np.abs(_r(rng, 6)) + 0.5


@_case("add.broadcast")
def _(rng):
    b = Tensor(_r(rng, 4))
    m = Tensor(_r(rng, 3, 4))
    return lambda x: ad.sum_(ad.mul(ad.add(x, b), m)), _r(rng, 3, 4)


@_case("mul.broadcast")
def _(rng):
    b = Tensor(_r(rng, 3, 1))
    m = Tensor(_r(rng, 3, 4))
    return lambda x: ad.sum_(ad.mul(ad.mul(x, b), m)), _r(rng, 3, 4)


@_case("div")
def _(rng):
    b = Tensor(np.abs(_r(rng, 3, 4)) + 0.5)
    m = Tensor(_r(rng, 3, 4))
    return lambda x: ad.sum_(ad.mul(ad.div(x, b), m)), _r(rng, 3, 4)


@_case("mean.axis")
def _(rng):
    m = Tensor(_r(rng, 3))
    return lambda x: ad.sum_(ad.mul(ad.mean_(x, axis=1), m)), _r(rng, 3, 5)


@_case("reshape.transpose")
def _(rng):
    m = Tensor(_r(rng, 4, 3))
    return (lambda x: ad.sum_(ad.mul(ad.transpose(ad.reshape(x, (3, 4)), (1, 0)), m)),
            _r(rng, 12))


@_case("concat.slice")
def _(rng):
    b = Tensor(_r(rng, 2, 3))
    m = Tensor(_r(rng, 2, 2))
    return (lambda x: ad.sum_(ad.mul(ad.slice_axis(ad.concat([x, b], 1), 1, 2, 4), m)),
            _r(rng, 2, 3))


@_case("upsample_nearest2x")
def _(rng):
    m = Tensor(_r(rng, 1, 2, 4, 4))
    return lambda x: ad.sum_(ad.mul(ad.upsample_nearest2x(x), m)), _r(rng, 1, 2, 2, 2)


def check_op(name, seeds=20, h=1e-4):
    """Max finite-difference error for one op across randomized inputs."""
    worst = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng(1000 + seed)
        f, x0 = OP_CASES[name](rng)
        worst = max(worst, finite_diff_check(f, Tensor(np.asarray(x0, dtype=F64)), h=h))
    return worst


def run_op_suite(seeds=20, h=1e-4):
    return {name: check_op(name, seeds=seeds, h=h) for name in OP_CASES}


# --- end-to-end micro-model ---------------------------------------------------


class MicroFusionNet(Module):
    """Sub-500-parameter dual-head net built from the real fusion machinery."""

    def __init__(self, rng, dtype=F64):
        cfg = SimpleNamespace(groups=1, text_dim=3, heads=1, ffn_mult=1.0,
                              fusion_depth=1)
        self.time_mlp = TimeEmbed(4, rng, dtype)
        self.e_proj = Linear(3, 3, rng, dtype)
        self.e_time_proj = Linear(4, 3, rng, dtype)
        self.conv_in = Conv2d(2, 3, 3, rng, pad=1, dtype=dtype)
        self.fuse = DualStreamBlock(3, cfg, rng, dtype)
        self.out_conv = Conv2d(3, 2, 3, rng, pad=1, dtype=dtype)
        self.predictor = Linear(3, 3, rng, dtype)
        self.dtype = dtype

    def forward_generation(self, z_t, t_z, c):
        b = z_t.shape[0]
        temb = self.time_mlp(t_z)
        q0 = Tensor(np.zeros((b, 1, 3), dtype=self.dtype))
        x = self.conv_in(Tensor(np.asarray(z_t, dtype=self.dtype)))
        x, _ = self.fuse(x, q0, c)
        return self.out_conv(ad.silu(x))

    def forward_alignment(self, z, e_t, t_e, c_null):
        b = z.shape[0]
        e_skip = ad.add(self.e_proj(Tensor(e_t)),
                        ad.reshape(self.e_time_proj(self.time_mlp(t_e)), (b, 1, 3)))
        x = self.conv_in(Tensor(np.asarray(z, dtype=self.dtype)))
        _, h_e = self.fuse(x, e_skip, c_null)
        return ad.reshape(self.predictor(h_e), (b, 3))


def build_micro_problem(seed=0):
    """(net, loss_fn) where loss_fn() is the deterministic full objective."""
    rng = np.random.default_rng(seed)
    net = MicroFusionNet(rng)
    sched_i = make_linear(10, 0.02, 0.3)
    sched_t = make_cosine(10)
    b = 2
    z0 = rng.standard_normal((b, 4, 4, 2))
    e0 = rng.standard_normal((b, 3))
    e0 = e0 / np.sqrt((e0 * e0).sum(axis=1, keepdims=True))
    c = Tensor(rng.standard_normal((b, 2, 3)))
    c_null = Tensor(rng.standard_normal((b, 2, 3)))
    t_z = np.array([3, 8])
    t_e = np.array([6, 2])
    eps_z = rng.standard_normal((b, 4, 4, 2))
    eps_e = rng.standard_normal((b, 1, 3))
    z_t = q_sample_image(z0, t_z, eps_z, sched_i)
    e_t = q_sample_text(e0[:, None, :], t_e, eps_e, 0.1, sched_t)

    def loss_fn():
        eps_hat = net.forward_generation(z_t, t_z, c)
        l_ig = objectives.loss_ig(eps_z, eps_hat)
        e0_hat = net.forward_alignment(z0, e_t, t_e, c_null)
        l_ita = objectives.loss_ita(objectives.similarity(e0_hat, e0, 10.0))
        return objectives.loss_total(l_ig, l_ita, 1.0)

    return net, loss_fn


def end_to_end_check(seed=0, h=1e-4):
    """Max finite-difference error of the full objective over every micro-model
    parameter; also returns the parameter count."""
    net, loss_fn = build_micro_problem(seed)
    params = list(net.named_parameters())
    n_params = sum(p.data.size for _, p in params)

    for _, p in params:
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    grads = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
             for name, p in params}

    worst = 0.0
    for name, p in params:
        flat = p.data.reshape(-1)
        gfd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn().item()
            flat[i] = orig - h
            fm = loss_fn().item()
            flat[i] = orig
            gfd[i] = (fp - fm) / (2 * h)
        ga = grads[name].reshape(-1)
        scale = max(np.abs(ga).max(initial=0.0), np.abs(gfd).max(initial=0.0), 1.0)
        worst = max(worst, float(np.abs(ga - gfd).max(initial=0.0) / scale))
    return worst, n_params


def negative_control(seed=0, h=1e-4):
    """A seeded-fault op (log with a dropped 1/x in its backward rule) must
    light up the checker: returns its reported error (expected >> 1e-2)."""

    def bad_log(t):
        out = Tensor(np.log(t.data))

        def bwd(g):
            ad._acc(t, g.copy(), True)  # wrong on purpose: missing 1/x factor

        return ad._record(out, (t,), bwd)

    rng = np.random.default_rng(seed)
    x = np.abs(rng.standard_normal(8)) + 2.0
    return finite_diff_check(lambda t: ad.sum_(bad_log(t)), Tensor(x), h=h)
