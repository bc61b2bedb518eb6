"""Tests for RMSProp and gradient clipping."""

import numpy as np
import pytest

from rainsar.errors import NonFiniteGradient
from rainsar.nn.optim import RMSProp, clip_gradients
from rainsar.nn.tensor import Tensor


def test_first_step_matches_closed_form():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = RMSProp([p], learning_rate=1e-5, decay=0.9, epsilon=1e-8, clip_norm=0.0)
    opt.step([np.array([1.0, -1.0])])
    delta = 1e-5 / (np.sqrt(0.1) + 1e-8)
    np.testing.assert_allclose(p.data, [1.0 - delta, -2.0 + delta], rtol=0, atol=1e-15)
    np.testing.assert_allclose(opt.accumulators[0], [0.1, 0.1])
    assert opt.hyperparameters()["steps"] == 1


def test_step_reads_parameter_gradients():
    p = Tensor(np.array([3.0]), requires_grad=True)
    (p * p).sum().backward()
    opt = RMSProp([p], learning_rate=0.1, clip_norm=0.0)
    opt.step()
    assert p.data[0] < 3.0
    opt.zero_grad()
    assert p.grad is None


def test_clip_by_global_norm():
    grads = [np.array([3.0]), np.array([4.0])]
    clipped = clip_gradients(grads, 1.0)
    np.testing.assert_allclose(np.concatenate(clipped), [0.6, 0.8])
    assert clip_gradients(grads, 10.0)[0] is grads[0]
    assert all(a is b for a, b in zip(clip_gradients(grads, 0.0), grads))


def test_clip_by_value():
    clipped = clip_gradients([np.array([-5.0, 0.3, 2.0])], 1.0, mode="value")
    np.testing.assert_array_equal(clipped[0], [-1.0, 0.3, 1.0])


def test_clipping_bounds_the_update():
    p = Tensor(np.zeros(2), requires_grad=True)
    opt = RMSProp([p], learning_rate=1.0, decay=0.0, epsilon=0.0, clip_norm=1.0)
    opt.step([np.array([300.0, 400.0])])
    # with decay 0 the update is the sign of the clipped gradient
    np.testing.assert_allclose(p.data, [-1.0, -1.0])
    np.testing.assert_allclose(opt.accumulators[0], [0.36, 0.64])


def test_non_finite_gradient_raises_before_update():
    p = Tensor(np.ones(3), requires_grad=True, name="w")
    opt = RMSProp([p])
    with pytest.raises(NonFiniteGradient):
        opt.step([np.array([0.1, np.nan, 0.2])])
    np.testing.assert_array_equal(p.data, np.ones(3))
    assert opt.steps == 0


def test_load_accumulators():
    p = Tensor(np.zeros((2, 2)), requires_grad=True)
    opt = RMSProp([p])
    opt.load_accumulators([np.arange(4.0)])
    np.testing.assert_array_equal(opt.accumulators[0], [[0.0, 1.0], [2.0, 3.0]])
    with pytest.raises(ValueError):
        opt.load_accumulators([])


def test_scalar_step_with_clipped_gradient():
    p = Tensor(np.array([0.0]), requires_grad=True)
    opt = RMSProp([p], learning_rate=1e-5, decay=0.9, epsilon=1e-8, clip_norm=1.0)
    opt.step([np.array([2.0])])
    np.testing.assert_allclose(opt.accumulators[0], [0.1], rtol=1e-15)
    np.testing.assert_allclose(p.data, [-1e-5 / (np.sqrt(0.1) + 1e-8)], rtol=1e-12)


def test_zero_gradient_only_decays_accumulator():
    p = Tensor(np.array([1.5, -0.25]), requires_grad=True)
    opt = RMSProp([p], learning_rate=1e-3, decay=0.9, clip_norm=1.0)
    opt.load_accumulators([np.array([0.4, 0.0])])
    opt.step([np.zeros(2)])
    np.testing.assert_array_equal(p.data, [1.5, -0.25])
    np.testing.assert_allclose(opt.accumulators[0], [0.36, 0.0], rtol=1e-15)
