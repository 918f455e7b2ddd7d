"""
Tests for activation subspace iteration and the HOSVD oracle.
"""
import itertools

import numpy as np
import pytest

from tensor_core.services.tensor_ops import ShapeMismatchError, TensorError, ZeroTensorError
from subspace.services.activation_subspace import (
    RankOutOfBoundsError,
    asi_step,
    hosvd,
    mode_explained_variance,
    rank_bounds,
    reconstruct_tucker,
    tucker_from_factors,
)


# ---------------------------------------------------------------------------
# Fixtures & helpers
# ---------------------------------------------------------------------------

@pytest.fixture()
def rng():
    return np.random.default_rng(233)


def _orthonormal(rng, rows, cols):
    return np.linalg.qr(rng.standard_normal((rows, cols)))[0]


def _exact_tucker(rng, shape, ranks):
    core = rng.standard_normal(ranks)
    factors = [_orthonormal(rng, d, r) for d, r in zip(shape, ranks)]
    return reconstruct_tucker(tucker_from_factors(core, factors))


def _relative_error(a, ta):
    return np.linalg.norm(a - reconstruct_tucker(ta)) / np.linalg.norm(a)


@pytest.fixture()
def noisy_low_rank(rng):
    return _exact_tucker(rng, (8, 6, 10), (3, 3, 3)) + 0.05 * rng.standard_normal((8, 6, 10))


# ---------------------------------------------------------------------------
# asi_step
# ---------------------------------------------------------------------------

def test_exact_tucker_recovered_by_warm_start(rng):
    a = _exact_tucker(rng, (6, 5, 7), (2, 3, 2))
    ta = asi_step(a, (2, 3, 2), rng=rng)
    for _ in range(3):
        ta = asi_step(a, (2, 3, 2), prev=ta)
    assert _relative_error(a, ta) <= 1e-8


@pytest.mark.parametrize("shape", [(3, 4, 5), (2, 3, 3, 4)])
def test_full_ranks_are_lossless(rng, shape):
    a = rng.standard_normal(shape)
    ta = asi_step(a, rank_bounds(shape), rng=rng)
    np.testing.assert_allclose(reconstruct_tucker(ta), a, atol=1e-9)


def test_warm_start_reaches_hosvd_error(rng, noisy_low_rank):
    a = noisy_low_rank
    oracle = _relative_error(a, hosvd(a, ranks=(3, 3, 3)))
    ta = asi_step(a, (3, 3, 3), rng=rng)
    for _ in range(29):
        ta = asi_step(a, (3, 3, 3), prev=ta)
    assert _relative_error(a, ta) <= 1.05 * oracle


def test_factors_orthonormal_after_every_step(rng, noisy_low_rank):
    ta = None
    for step in range(4):
        ta = asi_step(noisy_low_rank, (2, 3, 4), prev=ta, rng=rng)
        assert ta.epoch == step
        for factor in ta.factors:
            np.testing.assert_allclose(factor.T @ factor, np.eye(factor.shape[1]), atol=1e-10)


def test_stored_elements_closed_form(rng):
    ta = asi_step(rng.standard_normal((2, 4, 8)), (1, 2, 2), rng=rng)
    assert ta.stored_elements == 1 * 2 * 2 + (2 * 1 + 4 * 2 + 8 * 2)
    assert ta.stored_elements == 30


def test_warm_start_beats_cold_start_on_drifting_sequence(rng, noisy_low_rank):
    a = noisy_low_rank.copy()
    ranks = (3, 3, 3)
    cold_rng = np.random.default_rng(7)
    warm = asi_step(a, ranks, rng=np.random.default_rng(11))
    warm_errors, cold_errors = [], []
    for _ in range(50):
        a = a + 1e-3 * rng.standard_normal(a.shape)
        warm = asi_step(a, ranks, prev=warm)
        warm_errors.append(_relative_error(a, warm))
        cold_errors.append(_relative_error(a, asi_step(a, ranks, rng=cold_rng)))
    assert np.mean(warm_errors) <= np.mean(cold_errors)


def test_reconstruction_matches_brute_force_expansion(rng):
    a = rng.standard_normal((3, 4, 2, 3))
    ta = asi_step(a, (2, 2, 1, 2), rng=rng)
    expected = np.zeros(a.shape)
    for index in np.ndindex(a.shape):
        for r in itertools.product(*(range(k) for k in ta.ranks)):
            term = ta.core[r]
            for mode, (i, j) in enumerate(zip(index, r)):
                term *= ta.factors[mode][i, j]
            expected[index] += term
    np.testing.assert_allclose(reconstruct_tucker(ta), expected, atol=1e-12)


def test_asi_step_rejects_bad_ranks_and_stale_state(rng):
    a = rng.standard_normal((2, 3, 4))
    with pytest.raises(RankOutOfBoundsError):
        asi_step(a, (3, 1, 1), rng=rng)
    with pytest.raises(RankOutOfBoundsError):
        asi_step(a, (1, 1), rng=rng)
    prev = asi_step(a, (1, 2, 2), rng=rng)
    with pytest.raises(ShapeMismatchError):
        asi_step(rng.standard_normal((3, 3, 4)), (1, 2, 2), prev=prev)


def test_asi_step_rejects_matrices(rng):
    with pytest.raises(ShapeMismatchError):
        asi_step(rng.standard_normal((4, 4)), (2, 2), rng=rng)


# ---------------------------------------------------------------------------
# HOSVD oracle
# ---------------------------------------------------------------------------

def test_hosvd_recovers_superdiagonal_construction(rng):
    core = np.zeros((3, 3, 3))
    for k, value in enumerate((10.0, 9.0, 8.0)):
        core[k, k, k] = value
    shape = (5, 6, 7)
    factors = [_orthonormal(rng, d, 3) for d in shape]
    a = reconstruct_tucker(tucker_from_factors(core, factors))
    assert hosvd(a, epsilon=0.9).ranks == (3, 3, 3)


def test_hosvd_full_threshold_is_lossless(rng):
    a = rng.standard_normal((3, 4, 5))
    ta = hosvd(a, epsilon=1.0)
    assert ta.ranks == rank_bounds(a.shape)
    np.testing.assert_allclose(reconstruct_tucker(ta), a, atol=1e-9)


def test_hosvd_constant_mode_has_rank_one(rng):
    slab = rng.standard_normal((4, 5))
    a = np.repeat(slab[:, None, :], 6, axis=1)
    assert hosvd(a, epsilon=0.99).ranks[1] == 1


def test_hosvd_mode_ranks_monotone_in_threshold(rng, noisy_low_rank):
    previous = (0, 0, 0)
    for epsilon in np.linspace(0.1, 1.0, 10):
        ranks = hosvd(noisy_low_rank, epsilon=epsilon).ranks
        assert all(r >= p for r, p in zip(ranks, previous))
        previous = ranks


def test_hosvd_per_mode_thresholds(rng, noisy_low_rank):
    ta = hosvd(noisy_low_rank, epsilon=(1.0, 0.5, 1.0))
    assert ta.ranks[0] == 8
    assert ta.ranks[1] <= 3


def test_hosvd_argument_errors(rng):
    a = rng.standard_normal((2, 3, 4))
    with pytest.raises(TensorError):
        hosvd(a)
    with pytest.raises(TensorError):
        hosvd(a, ranks=(1, 1, 1), epsilon=0.5)
    with pytest.raises(ZeroTensorError):
        hosvd(np.zeros((2, 3, 4)), epsilon=0.9)


def test_mode_explained_variance_sums_to_one(rng):
    curves = mode_explained_variance(rng.standard_normal((3, 4, 5)))
    assert [len(c) for c in curves] == [3, 4, 5]
    for curve in curves:
        assert curve.sum() == pytest.approx(1.0)
