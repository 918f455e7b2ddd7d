"""
Tests for tensor_core.services.tensor_ops: unfold/fold, mode products,
Gram-Schmidt, explained-variance truncated SVD and the finite-difference
oracle.
"""
import itertools

import numpy as np
import pytest

from tensor_core.services.op_counter import OpCounter
from tensor_core.services.tensor_ops import (
    ModeOutOfRangeError,
    NonFiniteError,
    ShapeMismatchError,
    TensorError,
    ZeroTensorError,
    as_tensor,
    finite_difference_gradient,
    fold,
    mode_product,
    orthogonalize,
    select_rank,
    truncated_svd,
    unfold,
)


# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------

@pytest.fixture()
def rng():
    return np.random.default_rng(233)


@pytest.fixture()
def cube():
    """t[b, n, i] = 4b + 2n + i on a 2x2x2 grid."""
    return np.arange(8, dtype=np.float64).reshape(2, 2, 2)


# ---------------------------------------------------------------------------
# Tensors, unfold and fold
# ---------------------------------------------------------------------------

def test_as_tensor_rejects_order_five():
    with pytest.raises(ShapeMismatchError):
        as_tensor(np.zeros((1, 1, 1, 1, 1)))


def test_as_tensor_reshapes_row_major():
    t = as_tensor(range(6), shape=(2, 3))
    assert t[1, 0] == 3.0


def test_unfold_mode_one_of_cube(cube):
    np.testing.assert_array_equal(unfold(cube, 1), [[0, 1, 2, 3], [4, 5, 6, 7]])


def test_unfold_mode_three_of_cube(cube):
    np.testing.assert_array_equal(unfold(cube, 3), [[0, 2, 4, 6], [1, 3, 5, 7]])


def test_unfold_rejects_mode_out_of_range(cube):
    with pytest.raises(ModeOutOfRangeError):
        unfold(cube, 4)
    with pytest.raises(ModeOutOfRangeError):
        unfold(cube, 0)


@pytest.mark.parametrize("shape", [(3, 4), (2, 3, 4), (2, 3, 2, 4)])
def test_fold_inverts_unfold_for_every_mode(rng, shape):
    t = rng.standard_normal(shape)
    for mode in range(1, len(shape) + 1):
        np.testing.assert_array_equal(fold(unfold(t, mode), mode, shape), t)


# ---------------------------------------------------------------------------
# Mode products
# ---------------------------------------------------------------------------

def test_mode_product_with_identity_is_noop(rng):
    t = rng.standard_normal((2, 3, 4))
    np.testing.assert_allclose(mode_product(t, np.eye(3), 2), t, atol=0)


def test_mode_product_row_sums():
    t = np.array([[1.0, 2.0], [3.0, 4.0]])
    result = mode_product(t, np.array([[1.0, 1.0]]), 1)
    np.testing.assert_array_equal(result, [[4.0, 6.0]])


def test_mode_products_on_distinct_modes_commute(rng):
    t = rng.standard_normal((3, 4, 2))
    m1, m2 = rng.standard_normal((5, 3)), rng.standard_normal((2, 4))
    forward = mode_product(mode_product(t, m1, 1), m2, 2)
    backward = mode_product(mode_product(t, m2, 2), m1, 1)
    np.testing.assert_allclose(forward, backward, rtol=1e-12, atol=1e-12)


def test_mode_product_matches_index_loop(rng):
    t = rng.standard_normal((2, 3, 4, 2))
    m = rng.standard_normal((3, 4))
    expected = np.zeros((2, 3, 3, 2))
    for a, b, q, d in itertools.product(range(2), range(3), range(3), range(2)):
        expected[a, b, q, d] = sum(t[a, b, p, d] * m[q, p] for p in range(4))
    np.testing.assert_allclose(mode_product(t, m, 3), expected, rtol=1e-12, atol=1e-12)


def test_mode_product_dimension_mismatch(rng):
    with pytest.raises(ShapeMismatchError):
        mode_product(rng.standard_normal((2, 3)), np.eye(2), 2)


# ---------------------------------------------------------------------------
# Gram-Schmidt
# ---------------------------------------------------------------------------

def test_orthogonalize_random_matrix_has_identity_gram(rng):
    q = orthogonalize(rng.standard_normal((8, 3)))
    np.testing.assert_allclose(q.T @ q, np.eye(3), atol=1e-12)


def test_orthogonalize_keeps_orthonormal_columns():
    basis = np.linalg.qr(np.random.default_rng(1).standard_normal((6, 3)))[0]
    q = orthogonalize(basis)
    assert np.allclose(np.abs(np.sum(q * basis, axis=0)), 1.0, atol=1e-12)


def test_orthogonalize_replaces_duplicated_column(rng):
    m = rng.standard_normal((6, 3))
    m[:, 2] = m[:, 0]
    q = orthogonalize(m)
    np.testing.assert_allclose(q.T @ q, np.eye(3), atol=1e-10)


def test_orthogonalize_is_deterministic(rng):
    m = rng.standard_normal((5, 2))
    m[:, 1] = 0.0
    np.testing.assert_array_equal(orthogonalize(m), orthogonalize(m))


def test_orthogonalize_rejects_wide_matrix():
    with pytest.raises(ShapeMismatchError):
        orthogonalize(np.ones((2, 3)))


# ---------------------------------------------------------------------------
# Truncated SVD
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("epsilon, expected_rank", [(0.6, 1), (0.7, 2)])
def test_truncated_svd_diagonal_rank_rule(epsilon, expected_rank):
    assert truncated_svd(np.diag([3.0, 4.0]), epsilon).rank == expected_rank


def test_truncated_svd_rank_one_reconstructs(rng):
    w = np.outer(rng.standard_normal(5), rng.standard_normal(4))
    result = truncated_svd(w, 0.3)
    assert result.rank == 1
    np.testing.assert_allclose(result.left @ result.right, w, atol=1e-10)


def test_truncated_svd_full_threshold_is_lossless(rng):
    w = rng.standard_normal((6, 4))
    result = truncated_svd(w, 1.0)
    assert result.rank == 4
    assert np.linalg.norm(w - result.left @ result.right) <= 1e-9 * np.linalg.norm(w)


def test_truncated_svd_full_threshold_finds_numerical_rank(rng):
    w = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 5))
    assert truncated_svd(w, 1.0).rank == 2


def test_truncated_svd_rank_monotone_and_error_bounded(rng):
    w = rng.standard_normal((10, 8)) * (0.6 ** np.arange(8))
    ranks = []
    for epsilon in np.linspace(0.05, 1.0, 20):
        result = truncated_svd(w, epsilon)
        residual = np.linalg.norm(w - result.left @ result.right) ** 2 / np.linalg.norm(w) ** 2
        assert residual <= 1 - epsilon + 1e-9
        ranks.append(result.rank)
    assert ranks == sorted(ranks)


def test_truncated_svd_fixed_rank(rng):
    assert truncated_svd(rng.standard_normal((5, 5)), rank=3).rank == 3
    with pytest.raises(TensorError):
        truncated_svd(rng.standard_normal((5, 5)), rank=6)


def test_truncated_svd_rejects_zero_and_non_finite():
    with pytest.raises(ZeroTensorError):
        truncated_svd(np.zeros((3, 3)), 0.9)
    with pytest.raises(NonFiniteError):
        truncated_svd(np.array([[1.0, np.nan]]), 0.9)


def test_select_rank_never_below_one():
    assert select_rank(np.array([2.0, 1.0]), 0.0) == 1


def test_truncated_svd_charges_analytic_cost(rng):
    counter = OpCounter()
    with counter.activate():
        truncated_svd(rng.standard_normal((8, 4)), 0.9)
    assert counter.flops == 6 * 8 * 16 + 20 * 64


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------

def test_finite_difference_of_sum_of_squares():
    grad = finite_difference_gradient(lambda t: float(np.sum(t ** 2)), np.array([1.0, 2.0]), 1e-5)
    np.testing.assert_allclose(grad, [2.0, 4.0], atol=1e-6)


def test_finite_difference_exact_for_linear():
    c = np.array([[0.5, -2.0], [3.0, 1.5]])
    grad = finite_difference_gradient(lambda t: float(np.sum(c * t)), np.zeros((2, 2)), 1e-3)
    np.testing.assert_allclose(grad, c, atol=1e-8)


def test_finite_difference_of_quadratic_form(rng):
    a = rng.standard_normal((4, 3))
    t = rng.standard_normal(3)
    grad = finite_difference_gradient(lambda x: 0.5 * float(np.sum((a @ x) ** 2)), t, 1e-5)
    np.testing.assert_allclose(grad, a.T @ a @ t, atol=1e-5)


def test_finite_difference_rejects_non_positive_step():
    with pytest.raises(TensorError):
        finite_difference_gradient(np.sum, np.ones(2), 0.0)
