import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from advrot import tensor as T
from advrot.errors import DimensionError, ValidationError

from _oracles import naive_conv2d, numerical_grad, rel_error


@pytest.fixture
def rng():
    return np.random.default_rng(0)


class TestConvForward:
    def test_lenet_c1_shape(self, rng):
        out = T.conv2d_forward(rng.random((1, 32, 32)), rng.random((6, 1, 5, 5)), np.zeros(6))
        assert out.shape == (6, 28, 28)

    @pytest.mark.parametrize("k", [3, 5])
    def test_centered_delta_is_central_crop(self, rng, k):
        x = rng.random((1, 9, 9))
        kern = np.zeros((1, 1, k, k))
        kern[0, 0, k // 2, k // 2] = 1.0
        out = T.conv2d_forward(x, kern, np.zeros(1))
        m = k // 2
        np.testing.assert_array_equal(out[0], x[0, m:9 - m, m:9 - m])

    def test_hand_example(self):
        x = np.arange(1, 10, dtype=float).reshape(1, 3, 3)
        kern = np.ones((1, 1, 2, 2))
        expected = naive_conv2d(x, kern, np.zeros(1))
        np.testing.assert_array_equal(expected[0], [[12, 16], [24, 28]])
        np.testing.assert_array_equal(T.conv2d_forward(x, kern, np.zeros(1)), expected)

    @pytest.mark.parametrize("c_in,size,k,stride", [(1, 5, 3, 1), (2, 8, 3, 1), (2, 8, 4, 2),
                                                    (2, 8, 2, 2), (2, 7, 5, 1)])
    def test_matches_naive_loop_bit_for_bit(self, rng, c_in, size, k, stride):
        # small integers keep every partial sum exact, so summation order cannot matter
        x = rng.integers(-8, 9, (c_in, size, size)).astype(float)
        kern = rng.integers(-8, 9, (3, c_in, k, k)).astype(float)
        bias = rng.integers(-8, 9, 3).astype(float)
        out = T.conv2d_forward(x, kern, bias, stride)
        assert np.array_equal(out, naive_conv2d(x, kern, bias, stride))

    def test_batch_matches_single(self, rng):
        x = rng.random((3, 2, 6, 6))
        kern, bias = rng.random((4, 2, 3, 3)), rng.random(4)
        batched = T.conv2d_forward(x, kern, bias)
        for n in range(3):
            np.testing.assert_allclose(batched[n], T.conv2d_forward(x[n], kern, bias), rtol=1e-14)

    def test_channel_mismatch_names_axis(self, rng):
        with pytest.raises(DimensionError, match="channel"):
            T.conv2d_forward(rng.random((2, 6, 6)), rng.random((1, 3, 3, 3)), np.zeros(1))

    def test_kernel_larger_than_input(self, rng):
        with pytest.raises(DimensionError, match="height"):
            T.conv2d_forward(rng.random((1, 2, 6)), rng.random((1, 1, 3, 3)), np.zeros(1))

    def test_stride_must_divide(self, rng):
        with pytest.raises(DimensionError, match="stride"):
            T.conv2d_forward(rng.random((1, 6, 6)), rng.random((1, 1, 3, 3)), np.zeros(1), stride=2)

    def test_bias_shape(self, rng):
        with pytest.raises(DimensionError, match="bias"):
            T.conv2d_forward(rng.random((1, 6, 6)), rng.random((2, 1, 3, 3)), np.zeros(3))

    def test_inputs_not_mutated(self, rng):
        x, kern, bias = rng.random((1, 5, 5)), rng.random((2, 1, 3, 3)), rng.random(2)
        copies = [a.copy() for a in (x, kern, bias)]
        T.conv2d_forward(x, kern, bias)
        T.conv2d_backward(np.ones((2, 3, 3)), x, kern)
        for a, b in zip((x, kern, bias), copies):
            assert np.array_equal(a, b)


class TestConvBackward:
    def test_zero_cotangent(self, rng):
        x, kern = rng.random((2, 5, 5)), rng.random((3, 2, 3, 3))
        gx, gk, gb = T.conv2d_backward(np.zeros((3, 3, 3)), x, kern)
        assert not gx.any() and not gk.any() and not gb.any()

    def test_kernel_grad_tiny_case(self, rng):
        x, kern, bias = rng.random((1, 3, 3)), rng.random((1, 1, 2, 2)), np.zeros(1)
        g = rng.standard_normal((1, 2, 2))
        _, gk, _ = T.conv2d_backward(g, x, kern)
        num = numerical_grad(lambda k: np.sum(g * T.conv2d_forward(x, k, bias)), kern)
        assert rel_error(gk, num) < 1e-6

    def test_bias_grad_is_channel_sum(self, rng):
        g = rng.standard_normal((2, 4, 3, 3))
        _, _, gb = T.conv2d_backward(g, rng.random((2, 2, 5, 5)), rng.random((4, 2, 3, 3)))
        np.testing.assert_allclose(gb, g.sum(axis=(0, 2, 3)), rtol=1e-14)

    @pytest.mark.parametrize("shape,kshape,stride", [((2, 5, 5), (3, 2, 3, 3), 1),
                                                     ((2, 5, 5), (2, 2, 3, 3), 2),
                                                     ((1, 4, 4), (2, 1, 2, 2), 2)])
    def test_finite_differences(self, rng, shape, kshape, stride):
        x, kern, bias = rng.standard_normal(shape), rng.standard_normal(kshape), rng.standard_normal(kshape[0])
        out = T.conv2d_forward(x, kern, bias, stride)
        g = rng.standard_normal(out.shape)
        gx, gk, gb = T.conv2d_backward(g, x, kern, stride)
        assert rel_error(gx, numerical_grad(lambda a: np.sum(g * T.conv2d_forward(a, kern, bias, stride)), x)) < 1e-4
        assert rel_error(gk, numerical_grad(lambda a: np.sum(g * T.conv2d_forward(x, a, bias, stride)), kern)) < 1e-4
        assert rel_error(gb, numerical_grad(lambda a: np.sum(g * T.conv2d_forward(x, kern, a, stride)), bias)) < 1e-4

    def test_grad_out_shape_checked(self, rng):
        with pytest.raises(DimensionError):
            T.conv2d_backward(np.zeros((1, 4, 4)), rng.random((1, 5, 5)), rng.random((1, 1, 3, 3)))


class TestAvgPool:
    def test_lenet_s2_shape(self, rng):
        assert T.avgpool2_forward(rng.random((6, 28, 28))).shape == (6, 14, 14)

    def test_constant(self):
        np.testing.assert_array_equal(T.avgpool2_forward(np.full((2, 4, 6), 0.3)), np.full((2, 2, 3), 0.3))

    def test_block_mean(self):
        assert T.avgpool2_forward(np.array([[[1.0, 2.0], [3.0, 4.0]]]))[0, 0, 0] == 2.5

    def test_odd_rejected(self, rng):
        with pytest.raises(DimensionError):
            T.avgpool2_forward(rng.random((1, 5, 4)))

    def test_backward_spreads_quarter(self):
        g = T.avgpool2_backward(np.array([[[4.0]]]))
        np.testing.assert_array_equal(g, np.ones((1, 2, 2)))

    def test_ones_cotangent_mass(self, rng):
        out = T.avgpool2_forward(rng.random((3, 6, 8)))
        assert T.avgpool2_backward(np.ones_like(out)).sum() == out.size

    def test_finite_differences(self, rng):
        x = rng.standard_normal((2, 4, 4))
        g = rng.standard_normal((2, 2, 2))
        num = numerical_grad(lambda a: np.sum(g * T.avgpool2_forward(a)), x)
        assert rel_error(T.avgpool2_backward(g), num) < 1e-4


class TestDense:
    def test_identity(self, rng):
        x = rng.random(4)
        np.testing.assert_array_equal(T.dense_forward(x, np.eye(4), np.zeros(4)), x)

    def test_hand_example(self):
        out = T.dense_forward(np.array([1.0, 1.0]), np.array([[1.0, 2.0], [3.0, 4.0]]), np.zeros(2))
        np.testing.assert_array_equal(out, [3.0, 7.0])

    def test_length_mismatch(self, rng):
        with pytest.raises(DimensionError):
            T.dense_forward(rng.random(3), rng.random((2, 4)), np.zeros(2))

    def test_finite_differences(self, rng):
        x, w, b = rng.standard_normal(5), rng.standard_normal((3, 5)), rng.standard_normal(3)
        g = rng.standard_normal(3)
        gx, gw, gb = T.dense_backward(g, x, w)
        assert rel_error(gx, numerical_grad(lambda a: g @ T.dense_forward(a, w, b), x)) < 1e-6
        assert rel_error(gw, numerical_grad(lambda a: g @ T.dense_forward(x, a, b), w)) < 1e-6
        assert rel_error(gb, numerical_grad(lambda a: g @ T.dense_forward(x, w, a), b)) < 1e-6


class TestTanh:
    def test_zero(self):
        assert T.tanh_forward(np.array(0.0)) == 0.0

    def test_saturation(self):
        assert abs(T.tanh_forward(np.array(1e3)) - 1.0) <= 1e-12

    def test_backward_at_zero(self):
        assert T.tanh_backward(1.0, T.tanh_forward(np.array(0.0))) == 1.0

    def test_rejects_nonfinite(self):
        with pytest.raises(ValidationError):
            T.tanh_forward(np.array([0.0, np.nan]))

    def test_finite_differences(self, rng):
        x = rng.standard_normal((2, 3, 3))
        g = rng.standard_normal(x.shape)
        num = numerical_grad(lambda a: np.sum(g * T.tanh_forward(a)), x)
        assert rel_error(T.tanh_backward(g, T.tanh_forward(x)), num) < 1e-4


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(T.softmax(np.full(10, 3.7)), np.full(10, 0.1), rtol=1e-15)

    def test_two_class(self):
        np.testing.assert_allclose(T.softmax(np.array([0.0, math.log(3.0)])), [0.25, 0.75], rtol=1e-15)

    def test_large_logits_stay_finite(self):
        p = T.softmax(np.array([1e4, 0.0, -1e4]))
        assert np.all(np.isfinite(p)) and p[0] == 1.0

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, 10, elements=st.floats(-50, 50)), st.floats(-100, 100))
    def test_sum_and_shift_invariance(self, z, c):
        p = T.softmax(z)
        assert abs(p.sum() - 1.0) <= 1e-9
        assert np.all((p >= 0) & (p <= 1))
        assert np.max(np.abs(T.softmax(z + c) - p)) <= 1e-12


class TestCrossEntropy:
    def test_perfect_prediction(self):
        y = T.one_hot(4)
        assert T.cross_entropy(y, y) == 0.0

    def test_uniform(self):
        assert T.cross_entropy(T.one_hot(2), np.full(10, 0.1)) == pytest.approx(math.log(10), abs=1e-12)
        assert math.log(10) == pytest.approx(2.302585, abs=1e-6)

    def test_monotone_in_true_probability(self):
        y = T.one_hot(0)
        losses = []
        for q in np.linspace(0.05, 0.95, 19):
            p = np.full(10, (1 - q) / 9)
            p[0] = q
            losses.append(T.cross_entropy(y, p))
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_log_floor(self):
        p = np.zeros(10)
        p[1] = 1.0
        assert T.cross_entropy(T.one_hot(0), p) == pytest.approx(-math.log(1e-12))

    @pytest.mark.parametrize("bad", [np.full(10, 0.1), np.r_[1.0, 1.0, np.zeros(8)], np.r_[0.5, np.zeros(9)]])
    def test_rejects_non_one_hot(self, bad):
        with pytest.raises(ValidationError):
            T.cross_entropy(bad, np.full(10, 0.1))


class TestSoftmaxXentGrad:
    def test_zero_when_prediction_is_one_hot(self):
        logits = np.zeros(10)
        logits[5] = 1000.0
        assert not T.softmax_xent_grad(T.one_hot(5), logits).any()

    def test_uniform_logits(self):
        g = T.softmax_xent_grad(T.one_hot(3), np.zeros(10))
        expected = np.full(10, 0.1)
        expected[3] = -0.9
        np.testing.assert_allclose(g, expected, atol=1e-15)

    def test_exactly_yp_minus_y(self, rng):
        z = rng.standard_normal(10)
        y = T.one_hot(7)
        assert np.array_equal(T.softmax_xent_grad(y, z), T.softmax(z) - y)

    def test_finite_differences(self, rng):
        z = rng.standard_normal(10)
        y = T.one_hot(2)
        num = numerical_grad(lambda a: T.cross_entropy(y, T.softmax(a)), z)
        assert rel_error(T.softmax_xent_grad(y, z), num) < 1e-6


class TestLpMetrics:
    def test_identical(self, rng):
        a = rng.random((28, 28))
        assert T.lp_metrics(a, a.copy()) == T.PerturbationMetrics(0, 0.0, 0.0)

    def test_three_pixels(self):
        a = np.zeros((28, 28))
        b = a.copy()
        b[0, 0] = b[5, 7] = b[27, 27] = 0.5
        m = T.lp_metrics(a, b)
        assert m.l0 == 3 and m.linf == 0.5
        assert m.l2 == pytest.approx(0.5 * math.sqrt(3), rel=1e-15)

    def test_fgsm_step_bound(self, rng):
        x = rng.uniform(0.1, 0.9, (28, 28))
        eps = 0.01
        m = T.lp_metrics(x, x + eps * np.sign(rng.standard_normal(x.shape)))
        assert m.linf <= eps + 1e-15

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            T.lp_metrics(np.zeros((2, 2)), np.zeros((2, 3)))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_symmetry_and_triangle(self, seed):
        r = np.random.default_rng(seed)
        a, b, c = r.random((3, 6, 6))
        assert T.lp_metrics(a, b) == T.lp_metrics(b, a)
        assert T.lp_metrics(a, c).l2 <= T.lp_metrics(a, b).l2 + T.lp_metrics(b, c).l2 + 1e-12
