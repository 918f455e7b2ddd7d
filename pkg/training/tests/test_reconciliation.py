"""
Measured counters against the closed-form cost model: FLOPs of one warm
training step of a WASI layer, and stored elements.
"""
import numpy as np
import pytest

from cost_model.services.cost_formulas import LayerShape, cost_report, memory_counts
from training.services.layers import SubspaceLinear

# (B, N, I, O, K, r1, r2, r3)
CONFIGS = [
    (32, 16, 64, 64, 8, 2, 4, 8),
    (32, 8, 32, 32, 4, 2, 2, 4),
    (32, 8, 16, 16, 2, 2, 2, 2),
    (32, 8, 64, 32, 8, 2, 4, 8),
    (32, 16, 32, 64, 4, 2, 4, 4),
    (64, 16, 64, 64, 8, 2, 4, 8),
    (32, 32, 32, 32, 4, 2, 4, 4),
    (32, 8, 64, 64, 8, 2, 2, 8),
    (32, 8, 128, 64, 8, 2, 2, 8),
    (32, 16, 128, 128, 16, 2, 4, 8),
    (24, 12, 48, 48, 6, 2, 3, 6),
    (16, 16, 64, 32, 4, 2, 4, 4),
    (48, 8, 32, 64, 4, 2, 2, 4),
    (32, 8, 16, 64, 4, 2, 2, 4),
    (16, 32, 64, 64, 8, 2, 4, 8),
    (16, 16, 32, 16, 4, 2, 4, 4),
    (64, 8, 32, 32, 4, 2, 2, 4),
    (32, 8, 64, 128, 8, 2, 2, 8),
    (32, 16, 96, 96, 12, 2, 4, 8),
    (40, 10, 40, 40, 5, 2, 3, 5),
]


def _layer(b, n, i, o, k, ranks):
    layer = SubspaceLinear("fc", i, o, mode="wasi", rank=k, seed=b + n + i + o, wsi_variant="verbatim")
    layer.activation_ranks = ranks
    return layer


def _step(layer, rng, shape, out_features):
    layer.forward(rng.standard_normal(shape))
    layer.backward(rng.standard_normal(shape[:-1] + (out_features,)))
    layer.weight.step(layer.weight.grad, 0.01)


@pytest.mark.parametrize("b, n, i, o, k, r1, r2, r3", CONFIGS)
def test_warm_step_flops_match_analytic_sum(b, n, i, o, k, r1, r2, r3):
    rng = np.random.default_rng(233)
    layer = _layer(b, n, i, o, k, (r1, r2, r3))
    _step(layer, rng, (b, n, i), o)
    layer.counter.reset()
    _step(layer, rng, (b, n, i), o)

    analytic = cost_report(LayerShape.build(b, n, i, o, k, (r1, r2, r3))).training_flops_wasi
    measured = layer.counter.flops
    assert abs(measured / analytic - 1.0) <= 0.15, (measured, analytic)


@pytest.mark.parametrize("b, n, i, o, k, r1, r2, r3", CONFIGS)
def test_stored_elements_equal_memory_formulas(b, n, i, o, k, r1, r2, r3):
    rng = np.random.default_rng(0)
    layer = _layer(b, n, i, o, k, (r1, r2, r3))
    layer.forward(rng.standard_normal((b, n, i)))
    _, _, m_w_wasi, m_a_wasi = memory_counts(LayerShape.build(b, n, i, o, k, (r1, r2, r3)))
    assert layer.weight_elements == m_w_wasi
    assert layer.activation_elements == m_a_wasi


def test_vanilla_stored_elements_equal_memory_formulas():
    rng = np.random.default_rng(0)
    layer = SubspaceLinear("fc", 16, 24, mode="vanilla")
    layer.forward(rng.standard_normal((4, 8, 16)))
    m_w_vanilla, m_a_vanilla, _, _ = memory_counts(LayerShape.build(4, 8, 16, 24))
    assert layer.weight_elements == m_w_vanilla
    assert layer.activation_elements == m_a_vanilla


def test_four_dimensional_stored_elements():
    rng = np.random.default_rng(0)
    layer = SubspaceLinear("fc", 6, 5, mode="wasi", rank=2)
    layer.activation_ranks = (2, 2, 3, 4)
    layer.forward(rng.standard_normal((3, 2, 4, 6)))
    _, _, m_w_wasi, m_a_wasi = memory_counts(LayerShape.build(3, (2, 4), 6, 5, 2, (2, 2, 3, 4)))
    assert (layer.weight_elements, layer.activation_elements) == (m_w_wasi, m_a_wasi)
