"""
Forward and backward passes of a bias-free linear layer y = a.W^T, in dense
form (the oracles) and in low-rank form.

Activations are (B, N, I) or (B, H, W, I); the leading dimensions are
flattened into one token axis for the dense-style products. The low-rank
weight gradient works directly on the Tucker form of the cached input.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from subspace.services.activation_subspace import TuckerActivation
from subspace.services.weight_subspace import LowRankWeight
from tensor_core.services.op_counter import contract
from tensor_core.services.tensor_ops import ShapeMismatchError

logger = logging.getLogger(__name__)


@dataclass
class LayerTape:
    """What a layer keeps from its forward pass for the backward pass."""

    shape_in: Tuple[int, ...]
    weight: Union[LowRankWeight, np.ndarray]
    tucker: Optional[TuckerActivation] = None
    dense_input: Optional[np.ndarray] = None

    def __post_init__(self):
        self.shape_in = tuple(self.shape_in)
        if self.tucker is not None and self.tucker.shape != self.shape_in:
            raise ShapeMismatchError(f"Tucker factors {self.tucker.shape} do not match input {self.shape_in}")
        if self.dense_input is not None and self.dense_input.shape != self.shape_in:
            raise ShapeMismatchError(f"Cached input {self.dense_input.shape} does not match {self.shape_in}")

    @property
    def stored_elements(self) -> int:
        if self.tucker is not None:
            return self.tucker.stored_elements
        return 0 if self.dense_input is None else self.dense_input.size


def _tokens(t: np.ndarray, features: int, what: str) -> np.ndarray:
    if t.ndim < 2 or t.shape[-1] != features:
        raise ShapeMismatchError(f"{what} of shape {t.shape} needs last extent {features}")
    return t.reshape(-1, features)


def _check_leading(a: np.ndarray, dy: np.ndarray) -> None:
    if a.shape[:-1] != dy.shape[:-1]:
        raise ShapeMismatchError(f"Activation {a.shape} and output gradient {dy.shape} disagree on leading extents")


# ───────────────────────────────────────────────────────────
# Dense oracles
# ───────────────────────────────────────────────────────────

def forward_dense(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    out_features, in_features = w.shape
    y = contract("ti,oi->to", _tokens(a, in_features, "Activation"), w, operator="forward_dense")
    return y.reshape(a.shape[:-1] + (out_features,))


def grad_weight_dense(a: np.ndarray, dy: np.ndarray) -> np.ndarray:
    _check_leading(a, dy)
    a2 = a.reshape(-1, a.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return contract("ti,to->oi", a2, dy2, operator="grad_weight_dense")


def grad_input_dense(dy: np.ndarray, w: np.ndarray) -> np.ndarray:
    out_features, in_features = w.shape
    dx = contract("to,oi->ti", _tokens(dy, out_features, "Output gradient"), w, operator="grad_input_dense")
    return dx.reshape(dy.shape[:-1] + (in_features,))


# ───────────────────────────────────────────────────────────
# Low-rank paths
# ───────────────────────────────────────────────────────────

def forward_lowrank(a: np.ndarray, lr: LowRankWeight) -> np.ndarray:
    """(a.R^T).L^T; only the B.N.K intermediate is materialized."""
    out_features, in_features = lr.shape
    projected = contract("ti,ki->tk", _tokens(a, in_features, "Activation"), lr.right,
                         operator="forward_lowrank", intermediate=True)
    y = contract("tk,ok->to", projected, lr.left, operator="forward_lowrank")
    return y.reshape(a.shape[:-1] + (out_features,))


def grad_input_lowrank(dy: np.ndarray, lr: LowRankWeight) -> np.ndarray:
    """(dy.L).R with a B.N.K intermediate."""
    out_features, in_features = lr.shape
    projected = contract("to,ok->tk", _tokens(dy, out_features, "Output gradient"), lr.left,
                         operator="grad_input_lowrank", intermediate=True)
    dx = contract("tk,ki->ti", projected, lr.right, operator="grad_input_lowrank")
    return dx.reshape(dy.shape[:-1] + (in_features,))


def grad_weight_lowrank_3d(ta: TuckerActivation, dy: np.ndarray) -> np.ndarray:
    """
    Weight gradient from a (B, N, I) Tucker activation:

        Z1[n,o,r1]  = sum_b  dY[b,n,o] U1[b,r1]
        Z2[r1,r3,n] = sum_r2 S[r1,r2,r3] U2[n,r2]
        Z3[r1,i,n]  = sum_r3 Z2[r1,r3,n] U3[i,r3]
        dW[o,i]     = sum_{n,r1} Z1[n,o,r1] Z3[r1,i,n]
    """
    if ta.order != 3 or dy.ndim != 3 or dy.shape[:2] != ta.shape[:2]:
        raise ShapeMismatchError(f"3-D weight gradient needs (B,N,I) Tucker and (B,N,O) dy, got {ta.shape} and {dy.shape}")
    u1, u2, u3 = ta.factors
    z1 = contract("bno,bp->nop", dy, u1, operator="grad_weight_z1")
    z2 = contract("pqs,nq->psn", ta.core, u2, operator="grad_weight_z2")
    z3 = contract("psn,is->pin", z2, u3, operator="grad_weight_z3")
    return contract("nop,pin->oi", z1, z3, operator="grad_weight_out")


def grad_weight_lowrank_4d(ta: TuckerActivation, dy: np.ndarray) -> np.ndarray:
    """
    Weight gradient from a (B, H, W, I) Tucker activation, contracting the
    spatial modes away one at a time before touching the core:

        Z1[r1,h,w,o]     = sum_b U1[b,r1] dY[b,h,w,o]
        Z2[r1,r2,w,o]    = sum_h U2[h,r2] Z1[r1,h,w,o]
        Z3[r1,r2,r3,o]   = sum_w U3[w,r3] Z2[r1,r2,w,o]
        Z4[o,r4]         = sum_{r1,r2,r3} Z3[r1,r2,r3,o] S[r1,r2,r3,r4]
        dW[o,i]          = sum_r4 Z4[o,r4] U4[i,r4]
    """
    if ta.order != 4 or dy.ndim != 4 or dy.shape[:3] != ta.shape[:3]:
        raise ShapeMismatchError(f"4-D weight gradient needs (B,H,W,I) Tucker and (B,H,W,O) dy, got {ta.shape} and {dy.shape}")
    u1, u2, u3, u4 = ta.factors
    z1 = contract("bp,bhwo->phwo", u1, dy, operator="grad_weight_z1")
    z2 = contract("hq,phwo->pqwo", u2, z1, operator="grad_weight_z2")
    z3 = contract("ws,pqwo->pqso", u3, z2, operator="grad_weight_z3")
    z4 = contract("pqso,pqst->ot", z3, ta.core, operator="grad_weight_z4")
    return contract("ot,it->oi", z4, u4, operator="grad_weight_out")


def grad_weight_lowrank(ta: TuckerActivation, dy: np.ndarray) -> np.ndarray:
    if ta.order == 3:
        return grad_weight_lowrank_3d(ta, dy)
    if ta.order == 4:
        return grad_weight_lowrank_4d(ta, dy)
    raise ShapeMismatchError(f"Low-rank weight gradient supports order 3 or 4, got {ta.order}")
