"""Adam step against an independent scalar reference."""

import numpy as np

from adaptvos.network import ArchConfig, checkpoint_bytes, init_network
from adaptvos.optim import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, adam_step

import pytest

TINY = ArchConfig(widths=(2, 2, 2, 2), dilations=(1, 1), use_residual_block=False)


def _scalar_adam_reference(grads, lr):
    """Hand-rolled scalar Adam trajectory, independent of the package code."""
    m = v = 0.0
    x = 1.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mhat = m / (1 - 0.9 ** t)
        vhat = v / (1 - 0.999 ** t)
        x -= lr * mhat / (np.sqrt(vhat) + 1e-8)
        out.append(x)
    return out


def test_three_steps_on_quadratic_match_reference():
    net = init_network(TINY, 0)
    name = "conv1.bias"
    net.parameters[name].data[:] = 1.0
    xs = []
    gs = []
    for _ in range(3):
        x = net.parameters[name].data[0]
        g = np.zeros_like(net.parameters[name].data)
        g[:] = 2.0 * x  # f(x) = x^2
        gs.append(2.0 * x)
        grads = {name: g}
        adam_step(net, grads, lr=0.1)
        xs.append(net.parameters[name].data[0])
    # reference uses the same gradient sequence
    ref = _scalar_adam_reference(gs, 0.1)
    np.testing.assert_allclose(xs, ref, rtol=0, atol=1e-12)


def test_zero_gradients_leave_parameters_unchanged():
    net = init_network(TINY, 1)
    grads = {k: np.zeros_like(v.data) for k, v in net.parameters.items()}
    adam_step(net, grads, lr=0.1)
    fresh = init_network(TINY, 1)
    for k in net.parameters:
        np.testing.assert_array_equal(net.parameters[k].data, fresh.parameters[k].data)
    assert net.step_count == 1


def test_zero_gradients_decay_moments_toward_zero():
    net = init_network(TINY, 1)
    for k in net.adam_m:
        net.adam_m[k][:] = 0.5
        net.adam_v[k][:] = 0.25
    adam_step(net, {k: np.zeros_like(v.data) for k, v in net.parameters.items()}, lr=0.1)
    np.testing.assert_allclose(net.adam_m["conv1.weight"], 0.5 * ADAM_BETA1)
    np.testing.assert_allclose(net.adam_v["conv1.weight"], 0.25 * ADAM_BETA2)


def test_first_step_magnitude_is_lr_times_sign():
    net = init_network(TINY, 2)
    name = "conv2.bias"
    g = np.full_like(net.parameters[name].data, -3.0)
    before = net.parameters[name].data.copy()
    adam_step(net, {name: g}, lr=0.01)
    delta = net.parameters[name].data - before
    np.testing.assert_allclose(delta, 0.01, rtol=1e-6)  # -lr * sign(-3) = +lr


def test_step_counter_shared_across_calls():
    net = init_network(TINY, 3)
    for i in range(4):
        adam_step(net, {}, lr=0.0)
    assert net.step_count == 4


def test_deterministic():
    a = init_network(TINY, 4)
    b = init_network(TINY, 4)
    g = {k: np.full_like(v.data, 0.3) for k, v in a.parameters.items()}
    adam_step(a, g, 1e-3)
    adam_step(b, {k: v.copy() for k, v in g.items()}, 1e-3)
    assert checkpoint_bytes(a) == checkpoint_bytes(b)


def test_shape_mismatch_rejected():
    net = init_network(TINY, 5)
    with pytest.raises(ValueError, match="shape"):
        adam_step(net, {"conv1.bias": np.zeros(7)}, 0.1)
    with pytest.raises(KeyError):
        adam_step(net, {"nope": np.zeros(1)}, 0.1)
