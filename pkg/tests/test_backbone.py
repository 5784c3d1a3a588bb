import numpy as np
import pytest

from dualdiff import autodiff as ad
from dualdiff.autodiff import Tape, Tensor
from dualdiff.backbone import (ALIGNMENT, GENERATION, Backbone, BackboneConfig,
                               DualStreamBlock, FusionTransformerBlock)
from dualdiff.errors import ConfigError
from dualdiff.nn import sinusoidal_embedding
from dualdiff import objectives

CFG = BackboneConfig(base_channels=8, channel_mult=(1, 2), heads=4,
                     text_dim=32, time_dim=32, groups=8, timesteps=20)


@pytest.fixture(scope="module")
def net():
    b = Backbone(CFG, np.random.default_rng(5))
    b.set_null_condition(np.random.default_rng(6).standard_normal(
        (CFG.text_len, CFG.text_dim)).astype(np.float32))
    return b


def inputs(rng, b=2, cfg=CFG):
    z = rng.standard_normal((b, 8, 8, 12)).astype(np.float32)
    t = rng.integers(1, cfg.timesteps + 1, b)
    c = rng.standard_normal((b, cfg.text_len, cfg.text_dim)).astype(np.float32)
    e_t = rng.standard_normal((b, 1, cfg.text_dim)).astype(np.float32)
    t_e = rng.integers(1, cfg.timesteps + 1, b)
    return z, t, c, e_t, t_e


class TestConfig:
    def test_mask_timestep_outside_training_range(self):
        assert CFG.t_mask == CFG.timesteps + 1
        assert not (1 <= CFG.t_mask <= CFG.timesteps)

    def test_divisibility_validated(self):
        with pytest.raises(ConfigError):
            BackboneConfig(base_channels=10, groups=8)
        with pytest.raises(ConfigError):
            BackboneConfig(text_dim=30, heads=4)


class TestTimeEmbed:
    def test_sinusoid_reference_at_zero(self):
        # half sines of zero, half cosines of zero
        emb = sinusoidal_embedding(np.array([0]), 8)[0]
        np.testing.assert_array_equal(emb, [0, 0, 0, 0, 1, 1, 1, 1])

    def test_distinct_timesteps_distinct_embeddings(self, net):
        a = net.time_mlp(np.array([3])).data
        b = net.time_mlp(np.array([4])).data
        assert np.abs(a - b).max() > 1e-6

    def test_deterministic(self, net):
        a = net.time_mlp(np.array([5])).data
        b = net.time_mlp(np.array([5])).data
        np.testing.assert_array_equal(a, b)


class TestMaskingIndependence:
    def test_generation_bit_invariant_to_query_inputs(self, net, rng):
        z, t, c, e1, te = inputs(rng)
        e2 = rng.standard_normal(e1.shape).astype(np.float32)
        out1 = net.unified(z, t, c=c, e_t=e1, t_e=te, mode=GENERATION).data
        out2 = net.unified(z, t, c=c, e_t=e2, t_e=te, mode=GENERATION).data
        np.testing.assert_array_equal(out1, out2)
        assert out1.shape == z.shape

    def test_alignment_bit_invariant_to_condition(self, net, rng):
        z, t, c1, e_t, te = inputs(rng)
        c2 = rng.standard_normal(c1.shape).astype(np.float32)
        out1 = net.unified(z, t, c=c1, e_t=e_t, t_e=te, mode=ALIGNMENT).data
        out2 = net.unified(z, t, c=c2, e_t=e_t, t_e=te, mode=ALIGNMENT).data
        np.testing.assert_array_equal(out1, out2)
        assert out1.shape == (2, CFG.text_dim)

    def test_many_randomized_trials(self, net, rng):
        for _ in range(10):
            z, t, c, e1, te = inputs(rng)
            e2 = rng.standard_normal(e1.shape).astype(np.float32)
            a = net.unified(z, t, c=c, e_t=e1, t_e=te, mode=GENERATION).data
            b = net.unified(z, t, c=c, e_t=e2, t_e=te, mode=GENERATION).data
            np.testing.assert_array_equal(a, b)


class TestForwardPaths:
    def test_generation_shape_and_determinism(self, net, rng):
        z, t, c, _, _ = inputs(rng, 3)
        a = net.forward_generation(z, t, c).data
        b = net.forward_generation(z, t, c).data
        assert a.shape == (3, 8, 8, 12)
        np.testing.assert_array_equal(a, b)

    def test_alignment_image_condition_is_live(self, net, rng):
        z, _, _, e_t, te = inputs(rng)
        z_null = np.zeros_like(z)
        a = net.forward_alignment(z, e_t, te).data
        b = net.forward_alignment(z_null, e_t, te).data
        assert np.abs(a - b).max() > 1e-6

    def test_timestep_range_enforced(self, net, rng):
        z, t, c, e_t, te = inputs(rng)
        with pytest.raises(ConfigError):
            net.forward_generation(z, np.array([0, 5]), c)
        with pytest.raises(ConfigError):
            net.forward_alignment(z, e_t, np.array([0, 5]))

    def test_untrained_generation_regression(self, net, rng):
        # run-once pin of the untrained forward on a fixed input
        gen = np.random.default_rng(42)
        z = gen.standard_normal((1, 8, 8, 12)).astype(np.float32)
        c = gen.standard_normal((1, 8, 32)).astype(np.float32)
        out = net.forward_generation(z, np.array([7]), c).data
        np.testing.assert_allclose(
            [float(out.mean()), float(out.std()), float(out[0, 0, 0, 0])],
            [-0.013975435, 0.79370135, -0.9244459], rtol=2e-4, atol=1e-6)


class TestFusionBlock:
    def test_first_block_text_input_equals_skip(self, rng):
        # h_e starts at zero, so the first query-stream input is e_skip alone
        h_e = Tensor(np.zeros((2, 1, CFG.text_dim), dtype=np.float32))
        e_skip = Tensor(rng.standard_normal((2, 1, CFG.text_dim)).astype(np.float32))
        q = ad.add(h_e, e_skip)
        np.testing.assert_array_equal(q.data, e_skip.data)

    def test_condition_perturbation_routing(self, rng):
        # with self-attention zeroed, c reaches image tokens (cross-attn) but
        # cannot reach the query stream (which skips cross-attn)
        blk = DualStreamBlock(8, CFG, np.random.default_rng(3))
        x = rng.standard_normal((2, 4, 4, 8)).astype(np.float32)
        q = rng.standard_normal((2, 1, CFG.text_dim)).astype(np.float32)
        c1 = rng.standard_normal((2, CFG.text_len, CFG.text_dim)).astype(np.float32)
        c2 = rng.standard_normal(c1.shape).astype(np.float32)
        x1, q1 = blk(Tensor(x), Tensor(q), Tensor(c1), diag_zero_self_attn=True)
        x2, q2 = blk(Tensor(x), Tensor(q), Tensor(c2), diag_zero_self_attn=True)
        assert np.abs(x1.data - x2.data).max() > 1e-6
        np.testing.assert_array_equal(q1.data, q2.data)
        # with shared self-attention live, c leaks to the query stream only
        # through the mixed image tokens
        x3, q3 = blk(Tensor(x), Tensor(q), Tensor(c1))
        x4, q4 = blk(Tensor(x), Tensor(q), Tensor(c2))
        assert np.abs(q3.data - q4.data).max() > 1e-7

    def test_query_token_participates_in_shared_attention(self, rng):
        blk = FusionTransformerBlock(8, CFG.text_dim, 4, 2.0, np.random.default_rng(1))
        tok1 = rng.standard_normal((1, 5, 8)).astype(np.float32)
        tok2 = tok1.copy()
        tok2[0, -1] += 1.0  # perturb the query token
        c = rng.standard_normal((1, CFG.text_len, CFG.text_dim)).astype(np.float32)
        out1 = blk(Tensor(tok1), Tensor(c)).data
        out2 = blk(Tensor(tok2), Tensor(c)).data
        assert np.abs(out1[0, :4] - out2[0, :4]).max() > 1e-7


class TestParameterCensus:
    def test_partition_is_exact_and_disjoint(self, net):
        part = net.parameter_partition()
        all_names = {n for n, _ in net.named_parameters()}
        assert set(part["alignment_only"]) <= set(part["scratch"])
        buckets = (set(part["shared_trunk"]) | set(part["generation_only"])
                   | set(part["scratch"]))
        assert buckets == all_names
        assert not set(part["shared_trunk"]) & set(part["scratch"])
        assert not set(part["shared_trunk"]) & set(part["generation_only"])
        assert not set(part["generation_only"]) & set(part["scratch"])
        # census: fixed by config
        assert part == Backbone(CFG, np.random.default_rng(0)).parameter_partition()

    def _grads(self, net, loss_kind, rng):
        for _, p in net.named_parameters():
            p.grad = None
        z, t, c, e_t, te = inputs(rng)
        with Tape() as tape:
            if loss_kind == "generation":
                out = net.forward_generation(z, t, c)
                loss = objectives.loss_ig(np.zeros_like(z), out)
            else:
                out = net.forward_alignment(z, e_t, te)
                target = rng.standard_normal((2, CFG.text_dim)).astype(np.float32)
                loss = objectives.loss_ita(objectives.similarity(out, target, 10.0))
        tape.backward(loss)
        return {n: (p.grad is not None and np.abs(p.grad).max() > 0)
                for n, p in net.named_parameters()}

    def test_gradients_reach_shared_trunk_from_both_losses(self, net, rng):
        part = net.parameter_partition()
        gen = self._grads(net, "generation", rng)
        ali = self._grads(net, "alignment", rng)
        for name in part["shared_trunk"]:
            assert gen[name], f"generation loss left {name} without gradient"
            assert ali[name], f"alignment loss left {name} without gradient"

    def test_alignment_only_params_untouched_by_generation_loss(self, net, rng):
        part = net.parameter_partition()
        gen = self._grads(net, "generation", rng)
        for name in part["alignment_only"]:
            assert not gen[name], f"{name} unexpectedly trained by generation loss"

    def test_generation_only_params_untouched_by_alignment_loss(self, net, rng):
        part = net.parameter_partition()
        ali = self._grads(net, "alignment", rng)
        for name in part["generation_only"]:
            assert not ali[name], f"{name} unexpectedly trained by alignment loss"
