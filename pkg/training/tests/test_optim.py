"""
Tests for the SGD optimizer and its learning-rate schedule.
"""
import math

import numpy as np
import pytest

from training.services.layers import Parameter, SubspaceLinear
from training.services.optim import SGD, cosine_learning_rate, global_grad_norm


def _param(value, grad, name="p"):
    p = Parameter(name, np.asarray(value, dtype=float))
    p.grad = np.asarray(grad, dtype=float)
    return p


# ---------------------------------------------------------------------------
# Schedule
# ---------------------------------------------------------------------------

def test_cosine_starts_at_lr_and_decays_towards_min():
    values = [cosine_learning_rate(t, 0.05, 0.0, 0, 100) for t in range(100)]
    assert values[0] == pytest.approx(0.05)
    assert values[50] == pytest.approx(0.025)
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert values[-1] > 0.0


def test_warmup_is_linear_and_never_zero():
    assert cosine_learning_rate(0, 0.1, 0.0, 4, 20) == pytest.approx(0.025)
    assert cosine_learning_rate(3, 0.1, 0.0, 4, 20) == pytest.approx(0.1)
    assert cosine_learning_rate(4, 0.1, 0.0, 4, 20) == pytest.approx(0.1)


def test_min_lr_is_the_floor():
    assert cosine_learning_rate(99, 1.0, 0.2, 0, 100) >= 0.2


def test_constant_schedule():
    opt = SGD(lr=0.3, schedule="constant", total_steps=10)
    assert opt.learning_rate(0) == opt.learning_rate(9) == 0.3


@pytest.mark.parametrize("kwargs", [
    dict(schedule="linear"),
    dict(lr=0.0),
    dict(lr=0.1, min_lr=0.2),
    dict(momentum=-0.1),
])
def test_invalid_settings_rejected(kwargs):
    with pytest.raises(ValueError):
        SGD(**kwargs)


# ---------------------------------------------------------------------------
# Steps
# ---------------------------------------------------------------------------

def test_global_norm_spans_parameters():
    params = [_param([0.0], [3.0]), _param([0.0, 0.0], [0.0, 4.0])]
    assert global_grad_norm(params) == pytest.approx(5.0)


def test_clipping_rescales_to_threshold():
    p = _param([0.0, 0.0], [3.0, 4.0])
    info = SGD(lr=1.0, weight_decay=0.0, clip_norm=2.0, schedule="constant").step([p], 0)
    assert info["grad_norm"] == pytest.approx(5.0)
    assert info["clip_scale"] == pytest.approx(0.4)
    np.testing.assert_allclose(p.value, [-1.2, -1.6])
    assert math.sqrt(float(np.sum(np.square(p.value)))) == pytest.approx(2.0)


def test_small_gradients_are_not_clipped():
    p = _param([1.0], [0.5])
    info = SGD(lr=0.1, weight_decay=0.0, clip_norm=2.0, schedule="constant").step([p], 0)
    assert info["clip_scale"] == 1.0
    np.testing.assert_allclose(p.value, [0.95])


def test_weight_decay_is_folded_into_gradient():
    p = _param([2.0], [0.0])
    SGD(lr=0.5, weight_decay=0.1, clip_norm=0.0, schedule="constant").step([p], 0)
    np.testing.assert_allclose(p.value, [2.0 - 0.5 * 0.1 * 2.0])


def test_weight_decay_is_added_after_clipping():
    p = _param([10.0, 0.0], [3.0, 4.0])
    info = SGD(lr=1.0, weight_decay=0.1, clip_norm=2.0, schedule="constant").step([p], 0)
    assert info["grad_norm"] == pytest.approx(5.0)
    np.testing.assert_allclose(p.value, [10.0 - (1.2 + 1.0), -1.6])


def test_momentum_accumulates():
    p = _param([0.0], [1.0])
    opt = SGD(lr=1.0, momentum=0.9, weight_decay=0.0, clip_norm=0.0, schedule="constant")
    opt.step([p], 0)
    p.grad = np.array([1.0])
    opt.step([p], 1)
    np.testing.assert_allclose(p.value, [-(1.0 + 1.9)])


def test_step_clears_gradients():
    p = _param([0.0], [1.0])
    SGD(schedule="constant").step([p], 0)
    assert p.grad is None


def test_weight_decay_on_lowrank_layer_uses_effective_weight():
    layer = SubspaceLinear("fc", 6, 6, mode="wasi", epsilon=1.0)
    before = layer.weight.effective().copy()
    layer.weight.grad = np.zeros((6, 6))
    SGD(lr=0.5, weight_decay=0.2, clip_norm=0.0, schedule="constant").step([layer.weight], 0)
    np.testing.assert_allclose(layer.weight.effective(), before * (1.0 - 0.5 * 0.2), atol=1e-12)
