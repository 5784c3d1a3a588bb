import numpy as np
import pytest

from dualdiff.errors import ConfigError
from dualdiff.schedule import (NoiseSchedule, data_to_noise, ddim_step,
                               make_cosine, make_linear, q_sample_image,
                               q_sample_text, select_timesteps)


class TestMakeLinear:
    def test_single_step_defaults(self):
        s = make_linear(1)
        np.testing.assert_allclose(s.betas, [8.5e-4])
        np.testing.assert_allclose(s.alpha_bars[0], 0.99915)

    def test_two_step_product(self):
        # oracle: independent elementwise product of (1 - beta_t)
        s = make_linear(2)
        np.testing.assert_allclose(s.betas, [8.5e-4, 1.2e-2])
        expected = (1 - 8.5e-4) * (1 - 1.2e-2)  # = 0.987160...
        np.testing.assert_allclose(s.alpha_bars[-1], expected, rtol=1e-12)
        np.testing.assert_allclose(expected, 0.9871602, rtol=1e-6)

    def test_monotone_alpha_bar(self):
        s = make_linear(100)
        assert (np.diff(s.alpha_bars) < 0).all()

    def test_bounds_validated(self):
        with pytest.raises(ConfigError):
            make_linear(10, beta_start=0.0)
        with pytest.raises(ConfigError):
            make_linear(10, beta_start=0.5, beta_end=0.1)
        with pytest.raises(ConfigError):
            make_linear(0)


class TestMakeCosine:
    def test_alpha_bar_zero_is_one_by_construction(self):
        s = make_cosine(10)
        # alpha_bar(0) uses the convention entry
        assert s.alpha_bar(0) == 1.0

    def test_closed_form_vs_beta_product(self):
        s = make_cosine(10)
        prod = 1.0
        for b in s.betas:
            prod *= 1.0 - b
        np.testing.assert_allclose(s.alpha_bars[-1], prod, atol=1e-6)

    def test_betas_clipped(self):
        s = make_cosine(100)
        assert (s.betas <= 0.999).all()
        assert (s.betas > 0.0).all()


class TestScheduleInvariants:
    @pytest.mark.parametrize("seed", range(8))
    def test_random_schedules_monotone_and_consistent(self, seed):
        rng = np.random.default_rng(seed)
        T = int(rng.integers(1, 1000))
        if rng.random() < 0.5:
            lo = float(rng.uniform(1e-5, 1e-2))
            hi = float(rng.uniform(lo, 0.5))
            s = make_linear(T, lo, hi)
        else:
            s = make_cosine(T, float(rng.uniform(1e-4, 0.05)))
        assert (s.betas > 0).all() and (s.betas < 1).all()
        assert s.alpha_bars[-1] > 0
        if T > 1:
            assert (np.diff(s.alpha_bars) < 0).all()
        prod = np.empty(T)
        acc = 1.0
        for i, b in enumerate(s.betas):
            acc *= 1.0 - b
            prod[i] = acc
        np.testing.assert_allclose(s.alpha_bars, prod, atol=1e-6)

    def test_bad_betas_rejected(self):
        with pytest.raises(ConfigError):
            NoiseSchedule("linear", 2, np.array([0.5, 1.5]))


class TestQSample:
    def test_image_noiseless_limit(self, rng):
        s = make_linear(10)
        z0 = rng.standard_normal((2, 4, 4, 3)).astype(np.float32)
        out = q_sample_image(z0, 5, np.zeros_like(z0), s)
        np.testing.assert_allclose(out, np.sqrt(s.alpha_bars[4]) * z0, rtol=1e-6)

    def test_cosine_endpoint_kills_signal(self):
        s = make_cosine(50)
        z0 = np.ones((1, 2, 2, 1), dtype=np.float32)
        out = q_sample_image(z0, 50, np.zeros_like(z0), s)
        assert np.abs(out).max() < 0.05

    def test_image_variance_monte_carlo(self):
        # Var(z_t) = abar + (1 - abar) = 1 for unit-variance signal and noise
        s = make_linear(10)
        gen = np.random.default_rng(123)
        n = 10_000
        z0 = gen.standard_normal(n).astype(np.float32)
        eps = gen.standard_normal(n).astype(np.float32)
        zt = q_sample_image(z0, 7, eps, s)
        var = zt.var()
        sigma = np.sqrt(2.0 / n)  # sd of a unit-variance sample variance
        assert abs(var - 1.0) < 3 * sigma

    def test_text_noiseless(self, rng):
        s = make_cosine(10)
        e0 = rng.standard_normal((1, 8)).astype(np.float32)
        e0 /= np.linalg.norm(e0)
        out = q_sample_text(e0, 1, np.zeros_like(e0), 1.0, s)
        np.testing.assert_allclose(out, np.sqrt(s.alpha_bars[0]) * e0, rtol=1e-6)

    def test_text_gamma_shrinks_signal(self, rng):
        s = make_cosine(10)
        e0 = rng.standard_normal((1, 8)).astype(np.float32)
        full = q_sample_text(e0, 3, np.zeros_like(e0), 1.0, s)
        tiny = q_sample_text(e0, 3, np.zeros_like(e0), 0.01, s)
        np.testing.assert_allclose(tiny, full * 0.01, rtol=1e-5)

    def test_text_mean_monte_carlo(self):
        s = make_cosine(10)
        gen = np.random.default_rng(9)
        e0 = np.ones((1, 4), dtype=np.float32) / 2.0
        n = 10_000
        draws = np.stack([
            q_sample_text(e0, 4, gen.standard_normal((1, 4)).astype(np.float32), 0.5, s)
            for _ in range(n)])
        mean = draws.mean(axis=0)
        expected = 0.5 * np.sqrt(s.alpha_bars[3]) * e0
        sd = np.sqrt(1 - s.alpha_bars[3]) / np.sqrt(n)
        assert (np.abs(mean - expected) < 3 * sd).all()

    def test_gamma_range_enforced(self, rng):
        s = make_cosine(5)
        e0 = rng.standard_normal((1, 4)).astype(np.float32)
        with pytest.raises(ConfigError):
            q_sample_text(e0, 1, np.zeros_like(e0), 1.5, s)

    def test_t_out_of_range(self, rng):
        s = make_linear(5)
        z = rng.standard_normal((1, 2)).astype(np.float32)
        with pytest.raises(ConfigError):
            q_sample_image(z, 6, np.zeros_like(z), s)


class TestDataToNoise:
    def test_round_trip_exact(self, rng):
        s = make_cosine(20)
        gamma = 0.1
        e0 = rng.standard_normal((3, 1, 8)).astype(np.float32)
        eps = rng.standard_normal((3, 1, 8)).astype(np.float32)
        t = np.array([2, 11, 20])
        e_t = q_sample_text(e0, t, eps, gamma, s)
        rec = data_to_noise(e_t, gamma * e0, t, s)
        np.testing.assert_allclose(rec, eps, atol=1e-5)

    def test_zero_prediction_degenerate(self, rng):
        s = make_linear(10)
        e_t = rng.standard_normal((1, 4)).astype(np.float32)
        out = data_to_noise(e_t, np.zeros_like(e_t), 5, s)
        np.testing.assert_allclose(out, e_t / np.sqrt(1 - s.alpha_bars[4]), rtol=1e-6)

    def test_against_independent_formula(self, rng):
        # duplicate implementation with explicit scalar arithmetic
        s = make_linear(30)
        e_t = rng.standard_normal(6).astype(np.float32)
        e0h = rng.standard_normal(6).astype(np.float32)
        t = 17
        ab = float(s.alpha_bars[t - 1])
        expected = np.array([(et - np.sqrt(ab) * eh) / np.sqrt(1 - ab)
                             for et, eh in zip(e_t, e0h)], dtype=np.float64)
        np.testing.assert_allclose(data_to_noise(e_t, e0h, t, s), expected, rtol=1e-5)


class TestDdimStep:
    def test_final_step_recovers_signal_exactly(self, rng):
        s = make_linear(10)
        x0 = rng.standard_normal((2, 3)).astype(np.float32)
        eps = rng.standard_normal((2, 3)).astype(np.float32)
        x1 = q_sample_image(x0, 1, eps, s)
        out = ddim_step(x1, eps, 1, 0, s)
        np.testing.assert_allclose(out, x0, atol=1e-5)

    def test_zero_eps_is_pure_rescaling(self, rng):
        s = make_linear(10)
        x = rng.standard_normal((2, 3)).astype(np.float32)
        out = ddim_step(x, np.zeros_like(x), 8, 3, s)
        scale = np.sqrt(s.alpha_bars[2] / s.alpha_bars[7])
        np.testing.assert_allclose(out, scale * x, rtol=1e-6)

    def test_composition_under_constant_eps_oracle(self, rng):
        # two steps vs one step agree when the model output is a constant
        s = make_cosine(30)
        x = rng.standard_normal(5).astype(np.float32)
        eps = rng.standard_normal(5).astype(np.float32)
        two = ddim_step(ddim_step(x, eps, 20, 10, s), eps, 10, 4, s)
        one = ddim_step(x, eps, 20, 4, s)
        np.testing.assert_allclose(two, one, atol=1e-5)

    def test_order_enforced(self, rng):
        s = make_linear(10)
        x = rng.standard_normal(3).astype(np.float32)
        with pytest.raises(ConfigError):
            ddim_step(x, x, 3, 3, s)

    def test_full_reconstruction_with_perfect_predictor(self, rng):
        # S == T with the true eps recovers x0 up to accumulated f32 rounding
        s = make_linear(50)
        x0 = rng.standard_normal((4, 6)).astype(np.float32)
        eps = rng.standard_normal((4, 6)).astype(np.float32)
        x = q_sample_image(x0, 50, eps, s)
        for t in range(50, 0, -1):
            x = ddim_step(x, eps, t, t - 1, s)
        np.testing.assert_allclose(x, x0, atol=1e-3)


class TestSelectTimesteps:
    def test_single_step(self):
        assert select_timesteps(100, 1) == [100]

    def test_stride_rule_case(self):
        assert select_timesteps(100, 4) == [100, 75, 50, 25]

    def test_full_schedule(self):
        assert select_timesteps(8, 8) == [8, 7, 6, 5, 4, 3, 2, 1]

    @pytest.mark.parametrize("T,S", [(100, 8), (100, 20), (7, 3), (5, 4), (9, 8)])
    def test_properties(self, T, S):
        ts = select_timesteps(T, S)
        assert len(ts) == S
        assert ts[0] == T
        assert all(a > b for a, b in zip(ts, ts[1:]))
        assert ts[-1] >= 1

    def test_s_greater_than_t_rejected(self):
        with pytest.raises(ConfigError):
            select_timesteps(5, 6)
