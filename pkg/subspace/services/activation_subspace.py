"""
Activation Subspace Iteration (ASI) and the HOSVD oracle.

An order-3 (B, N, I) or order-4 (B, H, W, I) activation is kept as a Tucker
form: core S of shape r plus one orthonormal factor U_m (D_m x r_m) per
mode. `asi_step` refines the factors with one subspace-iteration step per
mode, warm-started from the previous call's factors.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from tensor_core.services.op_counter import contract
from tensor_core.services.tensor_ops import (
    ShapeMismatchError,
    TensorError,
    ZeroTensorError,
    as_tensor,
    explained_variance,
    mode_product,
    orthogonalize,
    require_finite,
    select_rank,
    thin_svd,
    unfold,
    unfolding_shape,
)

logger = logging.getLogger(__name__)


class RankOutOfBoundsError(TensorError):
    """A mode rank lies outside [1, min(a_m, b_m)]."""


@dataclass
class TuckerActivation:
    core: np.ndarray
    factors: List[np.ndarray]
    ranks: Tuple[int, ...]
    epoch: int = 0
    shape: Tuple[int, ...] = field(init=False)

    def __post_init__(self):
        self.ranks = tuple(int(r) for r in self.ranks)
        if len(self.factors) != self.core.ndim or self.core.shape != self.ranks:
            raise ShapeMismatchError(
                f"Core {self.core.shape} does not match ranks {self.ranks} with {len(self.factors)} factors"
            )
        for mode, (factor, rank) in enumerate(zip(self.factors, self.ranks), start=1):
            if factor.ndim != 2 or factor.shape[1] != rank:
                raise ShapeMismatchError(f"Factor {mode} has shape {factor.shape}, expected (D, {rank})")
        self.shape = tuple(f.shape[0] for f in self.factors)

    @property
    def order(self) -> int:
        return len(self.factors)

    @property
    def stored_elements(self) -> int:
        """prod(r) + sum(D_m * r_m)."""
        return self.core.size + sum(f.size for f in self.factors)


def rank_bounds(shape: Sequence[int]) -> Tuple[int, ...]:
    """Per-mode maximum rank min(a_m, b_m)."""
    return tuple(min(unfolding_shape(shape, mode)) for mode in range(1, len(shape) + 1))


def check_ranks(shape: Sequence[int], ranks: Sequence[int]) -> Tuple[int, ...]:
    ranks = tuple(int(r) for r in ranks)
    bounds = rank_bounds(shape)
    if len(ranks) != len(bounds):
        raise RankOutOfBoundsError(f"Expected {len(bounds)} mode ranks for shape {tuple(shape)}, got {ranks}")
    for mode, (rank, bound) in enumerate(zip(ranks, bounds), start=1):
        if not 1 <= rank <= bound:
            raise RankOutOfBoundsError(f"Mode {mode} rank {rank} is outside [1, {bound}] for shape {tuple(shape)}")
    return ranks


def _activation(a) -> np.ndarray:
    a = as_tensor(a)
    if a.ndim not in (3, 4):
        raise ShapeMismatchError(f"Activations must be order 3 or 4, got shape {a.shape}")
    require_finite(a, "activation")
    return a


def asi_step(
    a: np.ndarray,
    ranks: Sequence[int],
    prev: Optional[TuckerActivation] = None,
    rng: Optional[np.random.Generator] = None,
    seed: int = 0,
) -> TuckerActivation:
    """
    One ASI pass over every mode of `a`.

    Args:
        a: order-3 or order-4 activation
        ranks: target rank per mode
        prev: previous Tucker state; its factors warm-start the iteration
        rng: source of the standard-normal start when there is no prev
        seed: used only when rng is not given

    Returns:
        TuckerActivation with orthonormal factors and the projected core.
    """
    a = _activation(a)
    ranks = check_ranks(a.shape, ranks)
    if prev is not None and (prev.shape != a.shape or prev.ranks != ranks):
        raise ShapeMismatchError(
            f"Warm start from {prev.shape} with ranks {prev.ranks} cannot serve {a.shape} with ranks {ranks}"
        )
    if prev is None and rng is None:
        rng = np.random.default_rng(seed)

    core = a
    factors = []
    for mode, rank in enumerate(ranks, start=1):
        a_m = unfold(a, mode)
        if prev is None:
            v = rng.standard_normal((a_m.shape[1], rank))
        else:
            v = contract("ab,ar->br", a_m, prev.factors[mode - 1], operator="asi_warm_start")
        u = orthogonalize(contract("ab,br->ar", a_m, v, operator="asi_project"))
        core = mode_product(core, u.T, mode, operator="asi_core")
        factors.append(u)

    return TuckerActivation(core, factors, ranks, epoch=0 if prev is None else prev.epoch + 1)


def hosvd(
    a: np.ndarray,
    ranks: Optional[Sequence[int]] = None,
    epsilon: Union[None, float, Sequence[float]] = None,
) -> TuckerActivation:
    """
    Truncated HOSVD with either fixed mode ranks or an explained-variance
    threshold (one value for all modes or one per mode).
    """
    a = _activation(a)
    if (ranks is None) == (epsilon is None):
        raise TensorError("hosvd needs exactly one of ranks or epsilon")
    if not np.any(a):
        raise ZeroTensorError("Cannot decompose an all-zero tensor")

    if epsilon is not None:
        thresholds = [float(epsilon)] * a.ndim if np.isscalar(epsilon) else [float(e) for e in epsilon]
        if len(thresholds) != a.ndim:
            raise TensorError(f"Expected {a.ndim} per-mode thresholds, got {len(thresholds)}")
        if any(not 0.0 <= e <= 1.0 for e in thresholds):
            raise TensorError(f"Thresholds must lie in [0, 1], got {thresholds}")
    else:
        ranks = check_ranks(a.shape, ranks)

    core = a
    factors, selected = [], []
    for mode in range(1, a.ndim + 1):
        u, s, _ = thin_svd(unfold(a, mode))
        rank = select_rank(s, thresholds[mode - 1]) if epsilon is not None else ranks[mode - 1]
        factor = np.ascontiguousarray(u[:, :rank])
        core = mode_product(core, factor.T, mode, operator="hosvd_core")
        factors.append(factor)
        selected.append(rank)

    return TuckerActivation(core, factors, tuple(selected))


def mode_explained_variance(a: np.ndarray) -> List[np.ndarray]:
    """Per-mode explained-variance profile of the unfoldings of `a`."""
    a = as_tensor(a)
    return [explained_variance(thin_svd(unfold(a, mode))[1]) for mode in range(1, a.ndim + 1)]


def reconstruct_tucker(ta: TuckerActivation) -> np.ndarray:
    t = ta.core
    for mode, factor in enumerate(ta.factors, start=1):
        t = mode_product(t, factor, mode, operator="tucker_reconstruct")
    return t


def tucker_from_factors(core: np.ndarray, factors: Sequence[np.ndarray], epoch: int = 0) -> TuckerActivation:
    core = np.asarray(core, dtype=np.float64)
    return TuckerActivation(core, [np.asarray(f, dtype=np.float64) for f in factors], core.shape, epoch)
