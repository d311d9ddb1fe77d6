"""Autodiff ops: forward semantics, tape traversal, finite-difference checks."""

import numpy as np
import pytest

from adaptvos.autodiff import (
    Tape,
    Tensor,
    add,
    backward,
    bilinear_upsample,
    conv2d,
    reduce_sum,
    relu,
    scale,
    sigmoid,
    softmax2,
)

from conftest import assert_grads_close, numerical_grad


def _rand(gen, *shape):
    return gen.standard_normal(shape)


class TestConv2d:
    def test_identity_kernel(self):
        gen = np.random.default_rng(0)
        x = Tensor(_rand(gen, 1, 2, 6, 6))
        k = Tensor(np.eye(2).reshape(2, 2, 1, 1))
        b = Tensor(np.zeros(2))
        out = conv2d(x, k, b)
        np.testing.assert_array_equal(out.data, x.data)

    def test_zero_kernel_gives_bias(self):
        gen = np.random.default_rng(1)
        x = Tensor(_rand(gen, 1, 3, 5, 5))
        k = Tensor(np.zeros((4, 3, 3, 3)))
        b = Tensor(np.array([1.0, -2.0, 0.5, 3.0]))
        out = conv2d(x, k, b)
        expected = np.broadcast_to(b.data[None, :, None, None], (1, 4, 5, 5))
        np.testing.assert_array_equal(out.data, expected)

    def test_matches_direct_convolution(self):
        # brute-force cross-correlation oracle over strides and dilations
        gen = np.random.default_rng(2)
        for stride, dilation in [(1, 1), (2, 1), (1, 2), (2, 2), (3, 1)]:
            x = gen.standard_normal((1, 2, 7, 9))
            k = gen.standard_normal((3, 2, 3, 3))
            b = gen.standard_normal(3)
            out = conv2d(Tensor(x), Tensor(k), Tensor(b), stride, dilation).data
            oh = -(-7 // stride)
            ow = -(-9 // stride)
            eff = 2 * dilation + 1
            pad_h = max((oh - 1) * stride + eff - 7, 0)
            pad_w = max((ow - 1) * stride + eff - 9, 0)
            xp = np.zeros((1, 2, 7 + pad_h, 9 + pad_w))
            xp[:, :, pad_h // 2:pad_h // 2 + 7, pad_w // 2:pad_w // 2 + 9] = x
            ref = np.zeros((1, 3, oh, ow))
            for ko in range(3):
                for oy in range(oh):
                    for ox in range(ow):
                        acc = b[ko]
                        for c in range(2):
                            for ky in range(3):
                                for kx in range(3):
                                    acc += (xp[0, c, oy * stride + ky * dilation,
                                               ox * stride + kx * dilation]
                                            * k[ko, c, ky, kx])
                        ref[0, ko, oy, ox] = acc
            np.testing.assert_allclose(out, ref, rtol=0, atol=1e-12)

    def test_output_rows_ceil(self):
        k = Tensor(np.ones((1, 1, 3, 3)))
        b = Tensor(np.zeros(1))
        for h in range(1, 33):
            for s in range(1, 5):
                x = Tensor(np.ones((1, 1, h, 8)))
                out = conv2d(x, k, b, stride=s)
                assert out.data.shape[2] == -(-h // s), (h, s)

    def test_shape_errors_name_dimensions(self):
        x = Tensor(np.zeros((1, 3, 4, 4)))
        k = Tensor(np.zeros((2, 4, 3, 3)))
        b = Tensor(np.zeros(2))
        with pytest.raises(ValueError, match="3 channels.*expects 4"):
            conv2d(x, k, b)
        with pytest.raises(ValueError, match="odd"):
            conv2d(x, Tensor(np.zeros((2, 3, 2, 2))), b)
        with pytest.raises(ValueError, match="bias"):
            conv2d(x, Tensor(np.zeros((2, 3, 3, 3))), Tensor(np.zeros(3)))

    def test_gradient_dilated(self):
        gen = np.random.default_rng(3)
        x = Tensor(_rand(gen, 1, 2, 6, 6), requires_grad=True)
        k = Tensor(_rand(gen, 3, 2, 3, 3), requires_grad=True)
        b = Tensor(_rand(gen, 3), requires_grad=True)
        tape = Tape()
        out = conv2d(x, k, b, stride=1, dilation=2, tape=tape)
        loss = reduce_sum(out, tape)
        backward(tape, loss)
        assert_grads_close(x.grad, numerical_grad(
            lambda v: conv2d(Tensor(v), Tensor(k.data), Tensor(b.data), 1, 2).data.sum(),
            x.data.copy()))
        assert_grads_close(k.grad, numerical_grad(
            lambda v: conv2d(Tensor(x.data), Tensor(v), Tensor(b.data), 1, 2).data.sum(),
            k.data.copy()))
        assert_grads_close(b.grad, numerical_grad(
            lambda v: conv2d(Tensor(x.data), Tensor(k.data), Tensor(v), 1, 2).data.sum(),
            b.data.copy()))

    def test_gradient_randomized_shapes(self):
        gen = np.random.default_rng(4)
        for trial in range(20):
            stride = int(gen.integers(1, 4))
            dilation = int(gen.integers(1, 3))
            cin = int(gen.integers(1, 4))
            cout = int(gen.integers(1, 4))
            h = int(gen.integers(3, 9))
            w = int(gen.integers(3, 9))
            x = Tensor(_rand(gen, 1, cin, h, w), requires_grad=True)
            k = Tensor(_rand(gen, cout, cin, 3, 3), requires_grad=True)
            b = Tensor(_rand(gen, cout), requires_grad=True)
            tape = Tape()
            out = conv2d(x, k, b, stride, dilation, tape=tape)
            loss = reduce_sum(out, tape)
            backward(tape, loss)

            def f_k(v):
                return conv2d(Tensor(x.data), Tensor(v), Tensor(b.data),
                              stride, dilation).data.sum()

            assert_grads_close(k.grad, numerical_grad(f_k, k.data.copy()))

            def f_x(v):
                return conv2d(Tensor(v), Tensor(k.data), Tensor(b.data),
                              stride, dilation).data.sum()

            assert_grads_close(x.grad, numerical_grad(f_x, x.data.copy()))


class TestBilinearUpsample:
    def test_factor_one_identity(self):
        gen = np.random.default_rng(5)
        x = Tensor(_rand(gen, 1, 2, 4, 5))
        np.testing.assert_array_equal(bilinear_upsample(x, 1).data, x.data)

    def test_constant_preserved(self):
        x = Tensor(np.full((1, 1, 3, 3), 0.7))
        out = bilinear_upsample(x, 4)
        assert out.data.shape == (1, 1, 12, 12)
        np.testing.assert_allclose(out.data, 0.7, rtol=0, atol=1e-15)

    def test_factor_below_one_rejected(self):
        with pytest.raises(ValueError, match="factor"):
            bilinear_upsample(Tensor(np.zeros((1, 1, 2, 2))), 0)

    def test_gradient(self):
        gen = np.random.default_rng(6)
        for factor in (2, 3):
            x = Tensor(_rand(gen, 1, 1, 2, 2), requires_grad=True)
            tape = Tape()
            out = bilinear_upsample(x, factor, tape)
            loss = reduce_sum(out, tape)
            backward(tape, loss)
            assert_grads_close(x.grad, numerical_grad(
                lambda v: bilinear_upsample(Tensor(v), factor).data.sum(), x.data.copy()))


class TestPointwise:
    def test_relu_values(self):
        out = relu(Tensor(np.array([-1.0, 0.0, 2.0])))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_relu_subgradient_at_zero(self):
        x = Tensor(np.array([-1.0, 2.0, 0.0]), requires_grad=True)
        tape = Tape()
        loss = reduce_sum(relu(x, tape), tape)
        backward(tape, loss)
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])

    def test_sigmoid_at_zero(self):
        assert sigmoid(Tensor(np.zeros(1))).data[0] == 0.5

    def test_sigmoid_gradient(self):
        gen = np.random.default_rng(7)
        x = Tensor(_rand(gen, 5), requires_grad=True)
        tape = Tape()
        loss = reduce_sum(sigmoid(x, tape), tape)
        backward(tape, loss)
        assert_grads_close(x.grad, numerical_grad(
            lambda v: (1.0 / (1.0 + np.exp(-v))).sum(), x.data.copy()))

    def test_scale_and_add_broadcast(self):
        gen = np.random.default_rng(8)
        x = Tensor(_rand(gen, 1, 3, 2, 2), requires_grad=True)
        b = Tensor(_rand(gen, 1, 3, 1, 1), requires_grad=True)
        tape = Tape()
        out = add(scale(x, 2.5, tape), b, tape)
        loss = reduce_sum(out, tape)
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, 2.5)
        np.testing.assert_allclose(b.grad, 4.0)  # each bias entry broadcast over 2x2

    def test_add_shape_mismatch(self):
        with pytest.raises(ValueError, match="incompatible"):
            add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


class TestSoftmax2:
    def test_symmetry(self):
        out = softmax2(Tensor(np.zeros((1, 2, 1, 1))))
        np.testing.assert_allclose(out.data.ravel(), [0.5, 0.5])

    def test_shift_invariance(self):
        gen = np.random.default_rng(9)
        logits = _rand(gen, 1, 2, 3, 3)
        shifted = logits + 7.3
        np.testing.assert_allclose(softmax2(Tensor(logits)).data,
                                   softmax2(Tensor(shifted)).data, atol=1e-12)

    def test_scalar_value(self):
        out = softmax2(Tensor(np.array([1.0, 3.0]).reshape(1, 2, 1, 1)))
        e2 = np.exp(2.0)
        np.testing.assert_allclose(out.data.ravel(), [1 / (1 + e2), e2 / (1 + e2)], rtol=1e-12)

    def test_sums_to_one(self):
        gen = np.random.default_rng(10)
        out = softmax2(Tensor(_rand(gen, 1, 2, 8, 8) * 10))
        sums = out.data.sum(axis=1)
        np.testing.assert_allclose(sums, 1.0, rtol=0, atol=1e-12)
        assert np.all(out.data > 0) and np.all(out.data < 1)

    def test_channel_count_checked(self):
        with pytest.raises(ValueError, match="2"):
            softmax2(Tensor(np.zeros((1, 3, 2, 2))))

    def test_gradient(self):
        # compose with sigmoid so the upstream gradient varies per element
        gen = np.random.default_rng(11)
        x = Tensor(_rand(gen, 1, 2, 3, 3), requires_grad=True)
        tape = Tape()
        loss = reduce_sum(sigmoid(softmax2(x, tape), tape), tape)
        backward(tape, loss)
        assert_grads_close(x.grad, numerical_grad(
            lambda v: (1.0 / (1.0 + np.exp(-softmax2(Tensor(v)).data))).sum(),
            x.data.copy()))


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        tape = Tape()
        loss = reduce_sum(x, tape)
        backward(tape, loss)
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_reuse_sums_gradients(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        tape = Tape()
        branch = add(scale(x, 2.0, tape), scale(x, 3.0, tape), tape)
        loss = reduce_sum(branch, tape)
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, [5.0, 5.0])

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.zeros(3), requires_grad=True)
        tape = Tape()
        out = relu(x, tape)
        with pytest.raises(ValueError, match="scalar"):
            backward(tape, out)

    def test_loss_off_tape_rejected(self):
        x = Tensor(np.zeros(3), requires_grad=True)
        tape = Tape()
        relu(x, tape)
        with pytest.raises(ValueError, match="tape"):
            backward(tape, Tensor(np.asarray(0.0), requires_grad=True))

    def test_tape_consumed(self):
        x = Tensor(np.ones(3), requires_grad=True)
        tape = Tape()
        loss = reduce_sum(x, tape)
        backward(tape, loss)
        assert len(tape) == 0

    def test_forward_bit_identical(self):
        gen = np.random.default_rng(12)
        x = gen.standard_normal((1, 3, 8, 8))
        k = gen.standard_normal((4, 3, 3, 3))
        b = gen.standard_normal(4)
        a = conv2d(Tensor(x), Tensor(k), Tensor(b), 2, 1).data
        c = conv2d(Tensor(x.copy()), Tensor(k.copy()), Tensor(b.copy()), 2, 1).data
        assert a.tobytes() == c.tobytes()
