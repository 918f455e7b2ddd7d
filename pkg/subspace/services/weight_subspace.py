"""
Weight Subspace Iteration (WSI).

A layer weight lives as factors L (O x K) and R (K x I). It is initialized
from the epsilon-truncated SVD of the dense weight; afterwards every update
forms the effective weight L.R - eta.grad transiently and pulls it back into
a rank-K subspace with one warm-started subspace-iteration step, so K stays
fixed for the rest of training.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from tensor_core.services.op_counter import contract
from tensor_core.services.tensor_ops import (
    ShapeMismatchError,
    TensorError,
    orthogonalize,
    require_finite,
    truncated_svd,
)

logger = logging.getLogger(__name__)

WSI_VARIANTS = ("verbatim", "refresh")
UPDATE_SIGNS = ("descent", "literal")


@dataclass
class LowRankWeight:
    left: np.ndarray
    right: np.ndarray
    rank: int
    epsilon: float
    iteration: int = 0

    def __post_init__(self):
        if self.left.ndim != 2 or self.right.ndim != 2:
            raise ShapeMismatchError("Low-rank factors must be matrices")
        if self.left.shape[1] != self.rank or self.right.shape[0] != self.rank:
            raise ShapeMismatchError(
                f"Factors {self.left.shape} and {self.right.shape} do not share rank {self.rank}"
            )
        if self.rank > min(self.shape):
            raise ShapeMismatchError(f"Rank {self.rank} exceeds min{self.shape}")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.left.shape[0], self.right.shape[1]

    @property
    def stored_elements(self) -> int:
        return self.left.size + self.right.size


def wsi_init(w: np.ndarray, epsilon: float, rank: Optional[int] = None) -> LowRankWeight:
    """Iteration 0: L = U_K.S_K and R = Vt_K from the truncated SVD of w."""
    result = truncated_svd(w, epsilon, rank=rank)
    logger.debug(f"wsi_init: {w.shape} -> rank {result.rank} at epsilon={epsilon}")
    return LowRankWeight(result.left, result.right, result.rank, float(epsilon), 0)


def wsi_step(
    w_eff: np.ndarray,
    prev: LowRankWeight,
    variant: str = "verbatim",
    seed: int = 0,
) -> LowRankWeight:
    """
    One warm-started subspace-iteration step on the effective weight.

    verbatim: R^T = W^T.L_prev, then L = orth(W.R^T).
    refresh:  as verbatim, then R = L^T.W from the new orthonormal basis.
    """
    if variant not in WSI_VARIANTS:
        raise TensorError(f"Unknown WSI variant '{variant}', expected one of {WSI_VARIANTS}")
    if w_eff.shape != prev.shape:
        raise ShapeMismatchError(f"Effective weight {w_eff.shape} does not match factors {prev.shape}")
    require_finite(w_eff, "effective weight")

    right_t = contract("oi,ok->ik", w_eff, prev.left, operator="wsi_right")
    left = orthogonalize(contract("oi,ik->ok", w_eff, right_t, operator="wsi_left"), seed=seed)
    if variant == "refresh":
        right = contract("ok,oi->ki", left, w_eff, operator="wsi_refresh")
    else:
        right = np.ascontiguousarray(right_t.T)

    return LowRankWeight(left, right, prev.rank, prev.epsilon, prev.iteration + 1)


def svd_step(w_eff: np.ndarray, prev: LowRankWeight) -> LowRankWeight:
    """Baseline: re-run the truncated SVD every step; K may drift."""
    if w_eff.shape != prev.shape:
        raise ShapeMismatchError(f"Effective weight {w_eff.shape} does not match factors {prev.shape}")
    result = truncated_svd(w_eff, prev.epsilon)
    if result.rank != prev.rank:
        logger.debug(f"svd_step: rank moved {prev.rank} -> {result.rank} at iteration {prev.iteration + 1}")
    return LowRankWeight(result.left, result.right, result.rank, prev.epsilon, prev.iteration + 1)


def reconstruct(lr: LowRankWeight) -> np.ndarray:
    return contract("ok,ki->oi", lr.left, lr.right, operator="wsi_reconstruct")


def apply_update(
    lr: LowRankWeight,
    grad_w: np.ndarray,
    eta: float,
    sign: str = "descent",
    base: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    New effective weight L.R -/+ eta.grad_w, to be fed to wsi_step.

    `base` is an already formed L.R product; `sign="literal"` keeps the
    +eta form of the update equation.
    """
    if sign not in UPDATE_SIGNS:
        raise TensorError(f"Unknown update sign '{sign}', expected one of {UPDATE_SIGNS}")
    if eta <= 0:
        raise TensorError(f"Learning rate must be positive, got {eta}")
    if grad_w.shape != lr.shape:
        raise ShapeMismatchError(f"Gradient {grad_w.shape} does not match weight {lr.shape}")
    require_finite(grad_w, "weight gradient")

    if base is None:
        base = reconstruct(lr)
    step = eta * grad_w
    return base - step if sign == "descent" else base + step
