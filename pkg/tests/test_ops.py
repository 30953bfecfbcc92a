import math

import numpy as np
import pytest

from ganglionet.ops import (
    bce_loss,
    bce_loss_backward,
    conv2d_backward,
    conv2d_forward,
    dice_coefficient,
    he_init,
    maxpool2_backward,
    maxpool2_forward,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
    upsample2_backward,
    upsample2_nearest,
)
from oracles import finite_difference_gradient, max_relative_error, naive_conv2d

FD_EPS = 1e-3
FD_TOL = 1e-3


def random_input(shape, seed, scale=1.0, center=True):
    rng = np.random.default_rng(seed)
    x = rng.random(shape)
    if center:
        x -= 0.5
    return x * scale


class TestConvForward:
    def test_1x1_scalar_multiply(self):
        x = np.full((1, 1, 1, 1), 2.0, dtype=np.float32)
        k = np.full((1, 1, 1, 1), 3.0, dtype=np.float32)
        out = conv2d_forward(x, k, np.zeros(1, np.float32))
        assert out.item() == pytest.approx(6.0)

    def test_zero_padding_window_sums(self):
        x = np.ones((1, 3, 3, 1), dtype=np.float32)
        k = np.ones((3, 3, 1, 1), dtype=np.float32)
        out = conv2d_forward(x, k, np.zeros(1, np.float32))[0, :, :, 0]
        assert out[1, 1] == pytest.approx(9.0)
        for y, x_ in ((0, 0), (0, 2), (2, 0), (2, 2)):
            assert out[y, x_] == pytest.approx(4.0)

    def test_matches_naive_loop_reference(self):
        rng = np.random.default_rng(42)
        x = (rng.random((1, 5, 5, 2)) - 0.5).astype(np.float32)
        k = (rng.random((3, 3, 2, 3)) - 0.5).astype(np.float32)
        b = (rng.random(3) - 0.5).astype(np.float32)
        out = conv2d_forward(x, k, b)
        ref = naive_conv2d(x, k, b)
        assert np.abs(out - ref).max() <= 1e-6

    def test_matches_naive_on_wide_channels(self):
        # exercises the shifted-offset GEMM path (cin >= 8)
        rng = np.random.default_rng(7)
        x = (rng.random((2, 6, 5, 9)) - 0.5).astype(np.float32)
        k = (rng.random((3, 3, 9, 4)) - 0.5).astype(np.float32)
        b = (rng.random(4) - 0.5).astype(np.float32)
        assert np.abs(conv2d_forward(x, k, b) - naive_conv2d(x, k, b)).max() <= 1e-6

    def test_channel_mismatch_rejected(self):
        x = np.zeros((1, 4, 4, 3), dtype=np.float32)
        k = np.zeros((3, 3, 2, 4), dtype=np.float32)
        with pytest.raises(ValueError) as err:
            conv2d_forward(x, k, np.zeros(4, np.float32))
        assert "(1, 4, 4, 3)" in str(err.value) and "(3, 3, 2, 4)" in str(err.value)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            conv2d_forward(
                np.zeros((1, 4, 4, 1), np.float32),
                np.zeros((2, 2, 1, 1), np.float32),
                np.zeros(1, np.float32),
            )


class TestConvBackward:
    def test_zero_grad_out(self):
        rng = np.random.default_rng(0)
        x = rng.random((1, 4, 4, 2))
        k = rng.random((3, 3, 2, 2))
        gx, gk, gb = conv2d_backward(np.zeros((1, 4, 4, 2)), x, k)
        assert not gx.any() and not gk.any() and not gb.any()

    def test_1x1_kernel_chain_rule(self):
        rng = np.random.default_rng(1)
        x = rng.random((1, 3, 3, 1))
        k = rng.random((1, 1, 1, 1))
        g = rng.random((1, 3, 3, 1))
        _, gk, gb = conv2d_backward(g, x, k)
        assert gk.item() == pytest.approx(float((x * g).sum()))
        assert gb.item() == pytest.approx(float(g.sum()))

    @pytest.mark.parametrize("seed", range(10))
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        shapes = [(1, 4, 4, 2, 3), (2, 3, 5, 3, 2), (1, 5, 3, 9, 2)]
        b_, h, w, cin, cout = shapes[seed % len(shapes)]
        x = rng.random((b_, h, w, cin)) - 0.5
        k = rng.random((3, 3, cin, cout)) - 0.5
        bias = rng.random(cout) - 0.5
        r = rng.random((b_, h, w, cout))  # fixed projection makes the loss scalar

        gx, gk, gb = conv2d_backward(r, x, k)
        fd_x = finite_difference_gradient(
            lambda v: float((conv2d_forward(v, k, bias) * r).sum()), x, FD_EPS
        )
        fd_k = finite_difference_gradient(
            lambda v: float((conv2d_forward(x, v, bias) * r).sum()), k, FD_EPS
        )
        fd_b = finite_difference_gradient(
            lambda v: float((conv2d_forward(x, k, v) * r).sum()), bias, FD_EPS
        )
        assert max_relative_error(gx, fd_x) <= FD_TOL
        assert max_relative_error(gk, fd_k) <= FD_TOL
        assert max_relative_error(gb, fd_b) <= FD_TOL


class TestPooling:
    def test_window_max(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32).reshape(1, 2, 2, 1)
        out, idx = maxpool2_forward(x)
        assert out.item() == 4.0

    def test_constant_input(self):
        x = np.full((1, 4, 6, 3), 2.5, dtype=np.float32)
        out, _ = maxpool2_forward(x)
        assert out.shape == (1, 2, 3, 3)
        assert (out == 2.5).all()

    def test_odd_extent_rejected(self):
        with pytest.raises(ValueError):
            maxpool2_forward(np.zeros((1, 3, 4, 1), np.float32))

    @pytest.mark.parametrize("seed", range(10))
    def test_backward_routes_to_argmax(self, seed):
        x = random_input((1, 4, 6, 2), seed)
        r = random_input((1, 2, 3, 2), seed + 100)

        def loss(v):
            out, _ = maxpool2_forward(v)
            return float((out * r).sum())

        _, idx = maxpool2_forward(x)
        grad = maxpool2_backward(r, idx)
        fd = finite_difference_gradient(loss, x, FD_EPS)
        assert max_relative_error(grad, fd) <= FD_TOL


class TestUpsample:
    def test_single_pixel_block(self):
        x = np.full((1, 1, 1, 1), 5.0, dtype=np.float32)
        out = upsample2_nearest(x)
        assert out.shape == (1, 2, 2, 1)
        assert (out == 5.0).all()

    def test_downsample_of_upsample_is_identity_on_constants(self):
        x = np.full((1, 3, 3, 2), 1.25, dtype=np.float32)
        up = upsample2_nearest(x)
        down, _ = maxpool2_forward(up)
        assert np.array_equal(down, x)

    @pytest.mark.parametrize("seed", range(10))
    def test_gradient_matches_finite_differences(self, seed):
        x = random_input((1, 3, 3, 2), seed)
        r = random_input((1, 6, 6, 2), seed + 50)
        grad = upsample2_backward(r)
        fd = finite_difference_gradient(
            lambda v: float((upsample2_nearest(v) * r).sum()), x, FD_EPS
        )
        assert max_relative_error(grad, fd) <= FD_TOL


class TestActivations:
    def test_relu_values(self):
        assert relu(np.array([-1.0])).item() == 0.0
        assert relu(np.array([2.0])).item() == 2.0

    def test_sigmoid_at_zero(self):
        assert sigmoid(np.array([0.0])).item() == pytest.approx(0.5)

    @pytest.mark.parametrize("seed", range(10))
    def test_gradients_match_finite_differences(self, seed):
        x = random_input((3, 4), seed, scale=4.0)
        x[np.abs(x) < 0.05] += 0.1  # keep clear of the relu kink
        r = random_input((3, 4), seed + 10)
        g_relu = relu_backward(r, x)
        fd_relu = finite_difference_gradient(lambda v: float((relu(v) * r).sum()), x, FD_EPS)
        assert max_relative_error(g_relu, fd_relu) <= FD_TOL

        out = sigmoid(x)
        g_sig = sigmoid_backward(r, out)
        fd_sig = finite_difference_gradient(lambda v: float((sigmoid(v) * r).sum()), x, FD_EPS)
        assert max_relative_error(g_sig, fd_sig) <= FD_TOL


class TestBce:
    def test_uniform_half_prediction_gives_ln2(self):
        pred = np.full((4, 4), 0.5)
        target = np.zeros((4, 4))
        target[:2] = 1.0
        assert bce_loss(pred, target) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_perfect_prediction_is_clamp_scale(self):
        target = np.zeros((8, 8))
        target[:, :4] = 1.0
        assert bce_loss(target.copy(), target) < 2e-7

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(5)
        pred = rng.uniform(0.05, 0.95, (6, 7))
        target = (rng.random((6, 7)) > 0.5).astype(np.float64)
        expected = float(
            np.mean(-(target * np.log(pred) + (1 - target) * np.log(1 - pred)))
        )
        assert bce_loss(pred, target) == pytest.approx(expected, rel=1e-10)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            bce_loss(np.zeros((2, 2)), np.zeros((2, 3)))

    @pytest.mark.parametrize("seed", range(10))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        pred = rng.uniform(0.1, 0.9, (3, 5))
        target = (rng.random((3, 5)) > 0.5).astype(np.float64)
        grad = bce_loss_backward(pred, target)
        fd = finite_difference_gradient(lambda v: bce_loss(v, target), pred, FD_EPS)
        assert max_relative_error(grad, fd) <= FD_TOL


class TestDice:
    def test_identical_masks(self):
        m = np.zeros((5, 5), bool)
        m[1:3, 1:4] = True
        assert dice_coefficient(m, m) == 1.0

    def test_disjoint_masks(self):
        a = np.zeros((5, 5), bool)
        b = np.zeros((5, 5), bool)
        a[0, 0] = True
        b[4, 4] = True
        assert dice_coefficient(a, b) == 0.0

    def test_hand_counted_overlap(self):
        a = np.zeros((4, 4), bool)
        b = np.zeros((4, 4), bool)
        a.ravel()[:6] = True  # |A| = 6
        b.ravel()[3:7] = True  # |B| = 4, overlap 3
        assert dice_coefficient(a, b) == pytest.approx(0.6)

    def test_both_empty(self):
        assert dice_coefficient(np.zeros((3, 3), bool), np.zeros((3, 3), bool)) == 1.0

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            a = rng.random((8, 8)) > 0.6
            b = rng.random((8, 8)) > 0.6
            d1 = dice_coefficient(a, b)
            assert d1 == dice_coefficient(b, a)
            assert 0.0 <= d1 <= 1.0


class TestHeInit:
    def test_same_seed_bit_identical(self):
        a = he_init((3, 3, 8, 16), seed=99)
        b = he_init((3, 3, 8, 16), seed=99)
        assert a.dtype == np.float32
        assert np.array_equal(a, b)

    def test_sample_variance_matches_fan_in(self):
        t = he_init((5, 5, 40, 100), seed=1)  # 1e5 entries
        expected = 2.0 / (5 * 5 * 40)
        assert abs(t.var() - expected) <= 0.1 * expected

    def test_bias_is_zero(self):
        assert not he_init((64,), seed=3).any()

    def test_explicit_fan_in_override(self):
        t = he_init((3, 3, 16, 16), seed=2, fan_in=9 * 32)
        expected = 2.0 / (9 * 32)
        assert abs(t.var() - expected) <= 0.15 * expected
