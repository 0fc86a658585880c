"""Semantics and gradient checks for the tensor core."""

import numpy as np
import pytest

from scgebd import tensor as tz
from scgebd.errors import ConfigError, ShapeError, UsageError

from .fd import check_grads


def rand(*shape, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return (scale * rng.normal(0, 1, shape)).astype(np.float32)


class TestMatmul:
    def test_identity(self):
        eye = tz.Tensor([[1.0, 0.0], [0.0, 1.0]])
        v = tz.Tensor([[3.0], [4.0]])
        np.testing.assert_array_equal(tz.matmul(eye, v).data, [[3.0], [4.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError) as e:
            tz.matmul(tz.Tensor(np.zeros((2, 3))), tz.Tensor(np.zeros((4, 5))))
        assert "(2, 3)" in str(e.value) and "(4, 5)" in str(e.value)

    def test_gradient(self):
        check_grads(tz.matmul, [rand(3, 4, seed=1), rand(4, 2, seed=2)])

    def test_batched_gradient(self):
        check_grads(tz.matmul, [rand(2, 3, 3, 4, seed=3), rand(2, 3, 4, 2, seed=4)])

    def test_broadcast_batch_gradient(self):
        # [B,H,L,d] @ [d,L] style broadcast over leading dims
        check_grads(tz.matmul, [rand(2, 4, 3, seed=5), rand(3, 5, seed=6)])


class TestSoftmax:
    def test_uniform(self):
        out = tz.softmax(tz.Tensor([0.0, 0.0, 0.0]), axis=0)
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-7)

    def test_stability_no_overflow(self):
        out = tz.softmax(tz.Tensor([1000.0, 0.0]), axis=0)
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data, [1.0, 0.0], atol=1e-6)

    def test_rows_sum_to_one(self):
        for seed in range(100):
            x = rand(4, 7, seed=seed, scale=20.0)
            out = tz.softmax(tz.Tensor(x), axis=-1)
            np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_invalid_axis(self):
        with pytest.raises(ShapeError):
            tz.softmax(tz.Tensor(np.zeros((2, 2))), axis=5)

    def test_gradient(self):
        check_grads(lambda x: tz.softmax(x, axis=-1), [rand(3, 5, seed=7)])
        check_grads(lambda x: tz.softmax(x, axis=0), [rand(4, 3, seed=8)])


class TestLayerNorm:
    def test_constant_input_normalizes_to_zero(self):
        x = tz.Tensor(np.full((2, 6), 3.7, dtype=np.float32))
        g = tz.Tensor(np.ones(6, dtype=np.float32))
        b = tz.Tensor(np.zeros(6, dtype=np.float32))
        out = tz.layer_norm(x, g, b)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-5)

    def test_unit_moments(self):
        x = tz.Tensor(rand(5, 64, seed=9))
        g = tz.Tensor(np.ones(64, dtype=np.float32))
        b = tz.Tensor(np.zeros(64, dtype=np.float32))
        out = tz.layer_norm(x, g, b).data
        assert np.abs(out.mean(axis=-1)).max() < 1e-6
        assert np.abs(out.var(axis=-1) - 1.0).max() < 1e-4

    def test_affine_shape_mismatch(self):
        with pytest.raises(ShapeError):
            tz.layer_norm(tz.Tensor(np.zeros((2, 4))), tz.Tensor(np.ones(3)), tz.Tensor(np.zeros(3)))

    def test_bad_eps(self):
        with pytest.raises(ConfigError):
            tz.layer_norm(tz.Tensor(np.zeros((2, 4))), tz.Tensor(np.ones(4)), tz.Tensor(np.zeros(4)), eps=0.0)

    def test_gradient(self):
        check_grads(tz.layer_norm, [rand(3, 6, seed=10), rand(6, seed=11) + 1.0, rand(6, seed=12)])


class TestConv1d:
    def test_unit_kernel_identity(self):
        x = tz.Tensor(rand(1, 1, 5, seed=13))
        w = tz.Tensor(np.ones((1, 1, 1), dtype=np.float32))
        np.testing.assert_allclose(tz.conv1d(x, w).data, x.data, rtol=1e-6)

    def test_hand_convolution(self):
        x = tz.Tensor(np.array([[[1.0, 2.0, 3.0]]], dtype=np.float32))
        w = tz.Tensor(np.ones((1, 1, 3), dtype=np.float32))
        np.testing.assert_allclose(tz.conv1d(x, w).data, [[[3.0, 6.0, 5.0]]], rtol=1e-6)

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            tz.conv1d(tz.Tensor(np.zeros((1, 1, 4))), tz.Tensor(np.zeros((1, 1, 2))))

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            tz.conv1d(tz.Tensor(np.zeros((1, 3, 4))), tz.Tensor(np.zeros((2, 4, 3))))

    def test_gradient(self):
        check_grads(tz.conv1d, [rand(2, 3, 7, seed=14), rand(4, 3, 3, seed=15), rand(4, seed=16)])


class TestConv2d:
    def test_unit_kernel_identity(self):
        x = tz.Tensor(rand(1, 1, 3, 3, seed=17))
        w = tz.Tensor(np.ones((1, 1, 1, 1), dtype=np.float32))
        np.testing.assert_allclose(tz.conv2d(x, w).data, x.data, rtol=1e-6)

    def test_hand_convolution(self):
        x = tz.Tensor(np.ones((1, 1, 2, 2), dtype=np.float32))
        w = tz.Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
        np.testing.assert_allclose(tz.conv2d(x, w).data, [[[[4.0, 4.0], [4.0, 4.0]]]], rtol=1e-6)

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            tz.conv2d(tz.Tensor(np.zeros((1, 1, 4, 4))), tz.Tensor(np.zeros((1, 1, 2, 2))))

    def test_gradient(self):
        check_grads(tz.conv2d, [rand(2, 2, 5, 5, seed=18), rand(3, 2, 3, 3, seed=19), rand(3, seed=20)])


class TestBackward:
    def test_sum_gives_ones(self):
        x = tz.Tensor(rand(4, seed=21), requires_grad=True)
        tz.backward(tz.summation(x))
        np.testing.assert_array_equal(x.grad, np.ones(4, dtype=np.float32))

    def test_sum_of_squares(self):
        x = tz.Tensor(np.array([1.0, 2.0], dtype=np.float32), requires_grad=True)
        tz.backward(tz.summation(tz.mul(x, x)))
        np.testing.assert_allclose(x.grad, [2.0, 4.0], rtol=1e-6)

    def test_non_scalar_loss_rejected(self):
        x = tz.Tensor(rand(3, seed=22), requires_grad=True)
        y = tz.mul(x, x)
        with pytest.raises(UsageError):
            tz.backward(y)
        tz.backward(tz.summation(y))  # drain tape

    def test_empty_tape_rejected(self):
        with pytest.raises(UsageError):
            tz.backward(tz.Tensor(0.0))

    def test_tape_cleared_after_backward(self):
        x = tz.Tensor(rand(3, seed=23), requires_grad=True)
        tz.backward(tz.summation(x))
        assert tz.tape_size() == 0

    def test_grad_accumulates_over_reuse(self):
        x = tz.Tensor(np.array([2.0], dtype=np.float32), requires_grad=True)
        y = tz.add(tz.mul(x, x), x)  # x^2 + x -> grad 2x + 1 = 5
        tz.backward(tz.summation(y))
        np.testing.assert_allclose(x.grad, [5.0], rtol=1e-6)

    def test_no_grad_records_nothing(self):
        x = tz.Tensor(rand(3, seed=24), requires_grad=True)
        with tz.no_grad():
            tz.mul(x, x)
        assert tz.tape_size() == 0


class TestShapeOps:
    def test_reshape_is_a_view(self):
        x = tz.Tensor(rand(2, 6, seed=25))
        out = tz.reshape(x, (3, 4))
        assert np.shares_memory(out.data, x.data)
        np.testing.assert_array_equal(out.data.reshape(-1), x.data.reshape(-1))

    def test_reshape_bad_size(self):
        with pytest.raises(ShapeError):
            tz.reshape(tz.Tensor(np.zeros((2, 3))), (4, 4))

    def test_reshape_gradient(self):
        check_grads(lambda x: tz.reshape(x, (6, 2)), [rand(3, 4, seed=26)])

    def test_transpose_roundtrip_and_gradient(self):
        x = rand(2, 3, 4, seed=27)
        out = tz.transpose(tz.Tensor(x), (2, 0, 1))
        assert out.shape == (4, 2, 3)
        check_grads(lambda t: tz.transpose(t, (1, 2, 0)), [x])

    def test_concat_and_gradient(self):
        a, b = rand(2, 3, seed=28), rand(2, 2, seed=29)
        out = tz.concat([tz.Tensor(a), tz.Tensor(b)], axis=1)
        assert out.shape == (2, 5)
        check_grads(lambda u, v: tz.concat([u, v], axis=1), [a, b])

    def test_narrow_and_gradient(self):
        x = rand(5, 3, seed=30)
        out = tz.narrow(tz.Tensor(x), 0, 1, 2)
        np.testing.assert_array_equal(out.data, x[1:3])
        with pytest.raises(ShapeError):
            tz.narrow(tz.Tensor(x), 0, 4, 3)
        check_grads(lambda t: tz.narrow(t, 1, 0, 2), [x])


class TestElementwise:
    def test_broadcast_add_gradient(self):
        # positional-embedding style add: [N,L,C] + [L,C]
        check_grads(tz.add, [rand(3, 4, 5, seed=31), rand(4, 5, seed=32)])

    def test_mul_div_gradient(self):
        check_grads(tz.mul, [rand(3, 4, seed=33), rand(3, 4, seed=34)])
        check_grads(tz.div, [rand(3, 4, seed=35), rand(3, 4, seed=36) + 3.0])

    def test_relu_gradient(self):
        x = rand(4, 4, seed=37) + 0.3  # keep points away from the kink
        check_grads(tz.relu, [x])

    def test_sigmoid_values_and_gradient(self):
        out = tz.sigmoid(tz.Tensor(np.array([0.0, 100.0, -100.0], dtype=np.float32)))
        np.testing.assert_allclose(out.data, [0.5, 1.0, 0.0], atol=1e-6)
        check_grads(tz.sigmoid, [rand(3, 3, seed=38)])

    def test_log_sqrt_abs_gradients(self):
        check_grads(tz.log, [np.abs(rand(3, 3, seed=39)) + 0.5])
        check_grads(tz.sqrt, [np.abs(rand(3, 3, seed=40)) + 0.5])
        check_grads(tz.absolute, [rand(3, 3, seed=41) + 0.4])

    def test_clip_gradient_zero_outside(self):
        x = tz.Tensor(np.array([-1.0, 0.5, 2.0], dtype=np.float32), requires_grad=True)
        tz.backward(tz.summation(tz.clip(x, 0.0, 1.0)))
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])

    def test_mean_sum_gradients(self):
        check_grads(lambda x: tz.mean(x, axis=(1, 2)), [rand(2, 3, 4, seed=42)])
        check_grads(lambda x: tz.summation(x, axis=0, keepdims=True), [rand(3, 4, seed=43)])
        check_grads(tz.mean, [rand(3, 4, seed=44)])

    def test_amax_value_and_gradient(self):
        x = np.array([[1.0, 5.0, 3.0], [2.0, 0.0, 7.0]], dtype=np.float32)
        out = tz.amax(tz.Tensor(x), axis=1)
        np.testing.assert_array_equal(out.data, [5.0, 7.0])
        check_grads(lambda t: tz.amax(t, axis=1), [rand(3, 5, seed=45)])

    def test_operator_sugar(self):
        x = tz.Tensor(np.array([2.0], dtype=np.float32), requires_grad=True)
        y = (x * 3.0 + 1.0 - 0.5) / 2.0
        np.testing.assert_allclose(y.data, [3.25])
        tz.backward(tz.summation(-y))
        np.testing.assert_allclose(x.grad, [-1.5])
