"""
Tests for activation memory and the two rank-plan searches, checked against
exhaustive enumeration.
"""
import itertools
import math

import numpy as np
import pytest

from rank_select.services.selection import (
    InfeasibleConstraintError,
    PerplexityTable,
    RankSelectionError,
    activation_memory,
    select_budget,
    select_perplexity_target,
)
from subspace.services.activation_subspace import RankOutOfBoundsError, asi_step


# ---------------------------------------------------------------------------
# Fixtures & helpers
# ---------------------------------------------------------------------------

DIMS = [(4, 5, 6), (3, 6, 8), (5, 4, 4), (6, 3, 5)]


def _random_table(rng, layers=4, columns=4):
    thresholds = np.linspace(0.4, 1.0, columns)
    dims = DIMS[:layers]
    ranks = np.zeros((layers, columns, 3), dtype=np.int64)
    for i, shape in enumerate(dims):
        for mode, bound in enumerate(shape):
            ranks[i, :, mode] = np.sort(rng.integers(1, bound + 1, size=columns))
    perplexity = rng.uniform(0.0, 1.0, size=(layers, columns))
    return PerplexityTable(thresholds, perplexity, ranks, dims)


def _strict_table():
    """Perplexity strictly falls and ranks strictly grow with the threshold."""
    ranks = np.array([[[1, 1, 1], [2, 2, 2], [3, 3, 3], [4, 4, 4]]] * 2)
    perplexity = np.array([[3.0, 2.0, 1.0, 0.0], [4.0, 2.5, 0.5, 0.0]])
    return PerplexityTable((0.4, 0.6, 0.8, 1.0), perplexity, ranks, [(4, 5, 6), (4, 4, 4)])


def _oracle(table, objective, constraint):
    memory = table.memory_matrix()
    best = None
    for indices in itertools.product(range(len(table.thresholds)), repeat=table.num_layers):
        m = sum(int(memory[i, j]) for i, j in enumerate(indices))
        p = math.fsum(float(table.perplexity[i, j]) for i, j in enumerate(indices))
        if objective == "budget":
            if m > constraint:
                continue
            key = (p, m, indices)
        else:
            if p > constraint + 1e-12 * max(1.0, abs(constraint)):
                continue
            key = (m, p, indices)
        if best is None or key < best:
            best = key
    return best


@pytest.fixture()
def rng():
    return np.random.default_rng(233)


# ---------------------------------------------------------------------------
# activation_memory
# ---------------------------------------------------------------------------

def test_activation_memory_formula():
    assert activation_memory((1, 2, 2), (2, 4, 8)) == 30
    assert activation_memory((1, 1, 1), (3, 5, 7)) == 1 + 3 + 5 + 7


def test_activation_memory_matches_stored_tucker(rng):
    a = rng.standard_normal((3, 5, 6))
    ta = asi_step(a, (2, 3, 4), rng=rng)
    assert activation_memory(ta.ranks, a.shape) == ta.stored_elements


def test_activation_memory_strictly_increasing_in_each_rank():
    dims = (4, 5, 6)
    base = activation_memory((2, 2, 2), dims)
    for mode in range(3):
        ranks = [2, 2, 2]
        ranks[mode] = 3
        assert activation_memory(ranks, dims) > base


def test_activation_memory_rejects_out_of_bounds():
    with pytest.raises(RankOutOfBoundsError):
        activation_memory((3, 1, 1), (2, 4, 8))


# ---------------------------------------------------------------------------
# Table validation
# ---------------------------------------------------------------------------

def test_table_round_trips_through_dict(rng):
    table = _random_table(rng)
    again = PerplexityTable.from_dict(table.to_dict())
    np.testing.assert_array_equal(again.perplexity, table.perplexity)
    np.testing.assert_array_equal(again.ranks, table.ranks)
    assert again.dims == table.dims


def test_table_rejects_decreasing_ranks():
    ranks = np.array([[[2, 2, 2], [1, 2, 2]]])
    with pytest.raises(RankSelectionError):
        PerplexityTable((0.5, 1.0), [[1.0, 0.0]], ranks, [(4, 4, 4)])


def test_table_rejects_negative_perplexity_and_bad_thresholds():
    ranks = np.array([[[1, 1, 1], [2, 2, 2]]])
    with pytest.raises(RankSelectionError):
        PerplexityTable((0.5, 1.0), [[-1.0, 0.0]], ranks, [(4, 4, 4)])
    with pytest.raises(RankSelectionError):
        PerplexityTable((1.0, 0.5), [[1.0, 0.0]], ranks, [(4, 4, 4)])


# ---------------------------------------------------------------------------
# select_budget
# ---------------------------------------------------------------------------

def test_large_budget_picks_largest_threshold():
    table = _strict_table()
    plan = select_budget(table, 10 ** 9)
    assert plan.indices == (3, 3)
    assert plan.perplexity == 0.0


def test_budget_at_floor_picks_smallest_threshold():
    table = _strict_table()
    floor = int(table.memory_matrix()[:, 0].sum())
    plan = select_budget(table, floor)
    assert plan.indices == (0, 0)
    assert plan.memory == floor


def test_budget_below_floor_is_infeasible():
    table = _strict_table()
    floor = int(table.memory_matrix()[:, 0].sum())
    with pytest.raises(InfeasibleConstraintError):
        select_budget(table, floor - 1)


def test_plan_memory_equals_formula(rng):
    table = _random_table(rng)
    plan = select_budget(table, int(table.memory_matrix().max(axis=1).sum()))
    assert plan.memory == sum(activation_memory(r, d) for r, d in zip(plan.ranks, table.dims))


# ---------------------------------------------------------------------------
# select_perplexity_target
# ---------------------------------------------------------------------------

def test_infinite_target_is_minimum_memory():
    plan = select_perplexity_target(_strict_table(), math.inf)
    assert plan.indices == (0, 0)


def test_lossless_target_picks_full_threshold():
    table = _strict_table()
    plan = select_perplexity_target(table, float(table.perplexity[:, -1].sum()))
    assert plan.indices == (3, 3)


def test_target_below_floor_is_infeasible():
    with pytest.raises(InfeasibleConstraintError):
        select_perplexity_target(_strict_table(), -1.0)


def test_target_trades_memory_for_perplexity():
    table = _strict_table()
    plan = select_perplexity_target(table, 3.0)
    # (1, 2): perplexity 2.5 with 38 + 63 elements
    assert plan.indices == (1, 2)
    assert plan.memory == 101
    assert plan.perplexity == 2.5


# ---------------------------------------------------------------------------
# Exhaustive oracle
# ---------------------------------------------------------------------------

def test_both_searches_match_exhaustive_enumeration_and_duality(rng):
    for _ in range(50):
        table = _random_table(rng)
        memory = table.memory_matrix()
        low, high = int(memory.min(axis=1).sum()), int(memory.max(axis=1).sum())
        budget = int(rng.integers(low, high + 1))

        plan_b = select_budget(table, budget)
        expected = _oracle(table, "budget", budget)
        assert plan_b.indices == expected[2]
        assert plan_b.memory <= budget

        target = float(rng.uniform(table.perplexity.min(axis=1).sum(), table.perplexity.max(axis=1).sum()))
        plan_t = select_perplexity_target(table, target)
        expected = _oracle(table, "target", target)
        assert plan_t.indices == expected[2]
        assert plan_t.perplexity <= target * (1 + 1e-12)

        dual = select_perplexity_target(table, plan_b.perplexity)
        assert dual.memory <= budget


def test_plan_serializes_per_layer_choices():
    plan = select_budget(_strict_table(), 10 ** 9)
    data = plan.to_dict()
    assert data["objective"] == "budget"
    assert [layer["threshold"] for layer in data["layers"]] == [1.0, 1.0]
    assert data["layers"][0]["ranks"] == [4, 4, 4]
