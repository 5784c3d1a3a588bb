import numpy as np
import pytest

from dualdiff import autodiff as ad
from dualdiff.autodiff import Tape, Tensor, backward, finite_diff_check
from dualdiff.errors import ConfigError, ShapeError


def param(arr, dtype=np.float64):
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
        out = ad.matmul(Tensor(np.eye(2, dtype=np.float32)), Tensor(a))
        np.testing.assert_array_equal(out.data, a)

    def test_hand_arithmetic(self):
        out = ad.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        b = Tensor(rng.standard_normal((3, 3)))
        err = finite_diff_check(
            lambda x: ad.sum_(ad.matmul(x, b)), param(rng.standard_normal((3, 3))),
            h=1e-4)
        assert err <= 1e-4


class TestConv2d:
    def test_scalar_kernel_doubles(self):
        x = np.arange(9, dtype=np.float32).reshape(1, 1, 3, 3)
        w = np.full((1, 1, 1, 1), 2.0, dtype=np.float32)
        out = ad.conv2d(Tensor(x), Tensor(w))
        np.testing.assert_array_equal(out.data, 2 * x)

    def test_impulse_response_imprints_kernel(self):
        x = np.zeros((1, 1, 5, 5), dtype=np.float32)
        x[0, 0, 2, 2] = 1.0
        w = np.full((1, 1, 3, 3), 1.0 / 9.0, dtype=np.float32)
        out = ad.conv2d(Tensor(x), Tensor(w), pad=1)
        np.testing.assert_allclose(out.data[0, 0, 1:4, 1:4], w[0, 0], rtol=1e-6)
        assert out.data[0, 0, 0, 0] == 0.0

    def test_non_integer_extent_rejected(self):
        with pytest.raises(ConfigError, match="not an integer"):
            ad.conv2d(Tensor(np.ones((1, 1, 5, 5))), Tensor(np.ones((1, 1, 2, 2))),
                      stride=2)

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(3)
        w = Tensor(rng.standard_normal((3, 2, 3, 3)))
        err = finite_diff_check(
            lambda x: ad.sum_(ad.conv2d(x, w, stride=1, pad=1)),
            param(rng.standard_normal((1, 2, 4, 4))), h=1e-4)
        assert err <= 1e-4


class TestSoftmax:
    def test_uniform_on_zeros(self):
        out = ad.softmax(Tensor(np.zeros(4)), axis=-1)
        np.testing.assert_allclose(out.data, 0.25)

    def test_shift_invariance_huge_inputs(self):
        out = ad.softmax(Tensor(np.array([1000.0, 1000.0])), axis=-1)
        np.testing.assert_allclose(out.data, [0.5, 0.5])
        assert np.isfinite(out.data).all()

    def test_rows_sum_to_one(self, rng):
        out = ad.softmax(Tensor(rng.standard_normal((5, 7))), axis=1)
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-6)
        assert (out.data > 0).all() and (out.data < 1).all()

    def test_invalid_axis(self):
        with pytest.raises(ShapeError):
            ad.softmax(Tensor(np.zeros((2, 2))), axis=5)

    def test_gradient(self, rng):
        m = Tensor(rng.standard_normal(5))
        err = finite_diff_check(
            lambda x: ad.sum_(ad.mul(ad.softmax(x, -1), m)),
            param(rng.standard_normal(5)), h=1e-4)
        assert err <= 1e-4


class TestNorms:
    def test_layer_norm_constant_input_is_zero(self):
        out = ad.layer_norm(Tensor(np.full((2, 8), 3.5)), Tensor(np.ones(8)),
                            Tensor(np.zeros(8)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-6)

    def test_layer_norm_two_point(self):
        out = ad.layer_norm(Tensor(np.array([[1.0, 3.0]])), Tensor(np.ones(2)),
                            Tensor(np.zeros(2)), eps=1e-12)
        np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-5)

    def test_layer_norm_standardizes(self, rng):
        out = ad.layer_norm(Tensor(rng.standard_normal((4, 16))),
                            Tensor(np.ones(16)), Tensor(np.zeros(16)))
        np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.data.var(axis=-1), 1.0, atol=1e-4)

    def test_group_norm_groups_must_divide(self):
        with pytest.raises(ConfigError, match="divide"):
            ad.group_norm(Tensor(np.ones((1, 6, 2, 2))), 4, Tensor(np.ones(6)),
                          Tensor(np.zeros(6)))

    def test_group_norm_gradient(self, rng):
        g = Tensor(rng.standard_normal(4))
        b = Tensor(rng.standard_normal(4))
        m = Tensor(rng.standard_normal((2, 4, 3, 3)))
        err = finite_diff_check(
            lambda x: ad.sum_(ad.mul(ad.group_norm(x, 2, g, b), m)),
            param(rng.standard_normal((2, 4, 3, 3))), h=1e-4)
        assert err <= 1e-4


class TestL2Normalize:
    def test_three_four_five(self):
        out = ad.l2_normalize(Tensor(np.array([3.0, 4.0])))
        np.testing.assert_allclose(out.data, [0.6, 0.8], rtol=1e-6)

    def test_unit_vector_unchanged(self):
        v = np.array([0.0, 1.0, 0.0])
        np.testing.assert_allclose(ad.l2_normalize(Tensor(v)).data, v, atol=1e-7)

    def test_scale_invariance(self, rng):
        x = rng.standard_normal(6)
        a = ad.l2_normalize(Tensor(x)).data
        b = ad.l2_normalize(Tensor(7.3 * x)).data
        np.testing.assert_allclose(a, b, rtol=1e-6)

    def test_unit_norm_output(self, rng):
        out = ad.l2_normalize(Tensor(rng.standard_normal((4, 9))), axis=-1)
        np.testing.assert_allclose(np.linalg.norm(out.data, axis=-1), 1.0, atol=1e-6)


class TestBackward:
    def test_quadratic(self):
        x = param([1.0, 2.0])
        with Tape() as tape:
            loss = ad.sum_(ad.mul(x, x))
        tape.backward(loss)
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_constant_expression_gives_zero_grads(self):
        x = param([1.0, 2.0])
        with Tape() as tape:
            loss = ad.sum_(ad.add(ad.mul(x, 0.0), 5.0))
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, [0.0, 0.0])

    def test_non_scalar_loss_rejected(self):
        x = param([1.0, 2.0])
        with Tape() as tape:
            y = ad.mul(x, x)
        with pytest.raises(ShapeError):
            backward(y)

    def test_detached_loss_rejected(self):
        with pytest.raises(ValueError, match="detached"):
            backward(Tensor(1.0))

    def test_repeated_backward_rejected(self):
        x = param([1.0])
        with Tape() as tape:
            loss = ad.sum_(ad.mul(x, x))
        tape.backward(loss)
        with pytest.raises(RuntimeError, match="consumed"):
            tape.backward(loss)

    def test_accumulation_same_tensor_twice_doubles(self):
        x = param([1.0, 2.0])
        with Tape() as tape:
            loss = ad.sum_(ad.add(x, x))
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])

    def test_diamond_no_grad_aliasing(self):
        # y = a + b consumed after z = a * c: the pass-through gradient of
        # add must not alias b.grad to a buffer later accumulated into
        a = param([1.0, 1.0])
        b = param([1.0, 1.0])
        c = param([3.0, 3.0])
        with Tape() as tape:
            z = ad.mul(a, c)
            y = ad.add(a, b)
            loss = ad.sum_(ad.add(y, z))
        tape.backward(loss)
        np.testing.assert_array_equal(b.grad, [1.0, 1.0])
        np.testing.assert_array_equal(a.grad, [4.0, 4.0])
        np.testing.assert_array_equal(c.grad, [1.0, 1.0])

    def test_no_tape_records_nothing(self):
        x = param([1.0])
        y = ad.mul(x, x)
        assert y._tape is None


class TestFiniteDiffCheck:
    def test_linear_function_is_exact(self, rng):
        err = finite_diff_check(lambda x: ad.sum_(x), param(rng.standard_normal(6)))
        assert err <= 1e-9

    def test_softmax_cross_entropy_composite(self, rng):
        target = Tensor(np.eye(4)[1])

        def f(x):
            return ad.neg(ad.sum_(ad.mul(target, ad.log_softmax(x, -1))))

        assert finite_diff_check(f, param(rng.standard_normal(4))) <= 1e-4

    def test_h_range_enforced(self):
        with pytest.raises(ConfigError):
            finite_diff_check(lambda x: ad.sum_(x), param([1.0]), h=1e-8)

    def test_wrong_backward_rule_is_caught(self):
        from dualdiff.gradcheck import negative_control
        assert negative_control() > 1e-2


class TestDeterminism:
    def test_forward_ops_bit_deterministic(self, rng):
        x = rng.standard_normal((4, 16)).astype(np.float32)
        w = rng.standard_normal((16, 8)).astype(np.float32)
        a = ad.matmul(Tensor(x), Tensor(w)).data
        b = ad.matmul(Tensor(x.copy()), Tensor(w.copy())).data
        np.testing.assert_array_equal(a, b)
        s1 = ad.softmax(Tensor(x), -1).data
        s2 = ad.softmax(Tensor(x.copy()), -1).data
        np.testing.assert_array_equal(s1, s2)

    def test_dtype_preserved(self):
        for dtype in (np.float32, np.float64):
            out = ad.silu(Tensor(np.ones(3, dtype=dtype)))
            assert out.dtype == dtype
