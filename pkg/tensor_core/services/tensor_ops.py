"""
Dense tensor arithmetic shared by every other app.

Tensors are float64 numpy arrays of order 1 to 4, row-major. Modes are
1-based throughout the public API, so mode 1 of a (B, N, I) activation is
the batch mode.
"""
import logging
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy import linalg

from .op_counter import charge, contract

logger = logging.getLogger(__name__)

MAX_ORDER = 4

# Cumulative explained variance compares against epsilon with this slack.
RANK_TOLERANCE = 1e-12

# A Gram-Schmidt residual below this fraction of its input column is
# treated as a collapsed direction.
COLLAPSE_TOLERANCE = 1e-12

_LABELS = "abcd"


class TensorError(ValueError):
    """Base exception for tensor arithmetic failures."""


class ShapeMismatchError(TensorError):
    """Operand extents do not line up."""


class ModeOutOfRangeError(TensorError):
    """Requested mode is not between 1 and the tensor order."""


class ZeroTensorError(TensorError):
    """Decomposition requested for a tensor with no nonzero entry."""


class NonFiniteError(TensorError):
    """NaN or infinity found where finite values are required."""


class TruncatedSVD(NamedTuple):
    left: np.ndarray
    right: np.ndarray
    rank: int
    singular_values: np.ndarray


def as_tensor(data, shape: Optional[Sequence[int]] = None) -> np.ndarray:
    """Coerce to a float64 tensor, optionally reshaping row-major to `shape`."""
    t = np.asarray(data, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(d) for d in shape)
        if int(np.prod(shape)) != t.size:
            raise ShapeMismatchError(f"{t.size} values cannot fill shape {shape}")
        t = t.reshape(shape)
    if not 1 <= t.ndim <= MAX_ORDER:
        raise ShapeMismatchError(f"Tensor order must be between 1 and {MAX_ORDER}, got {t.ndim}")
    if any(d < 1 for d in t.shape):
        raise ShapeMismatchError(f"All extents must be positive, got {t.shape}")
    return t


def require_finite(t: np.ndarray, what: str = "tensor") -> None:
    if not np.all(np.isfinite(t)):
        raise NonFiniteError(f"{what} contains NaN or infinite entries")


def _check_mode(order: int, mode: int) -> None:
    if not 1 <= mode <= order:
        raise ModeOutOfRangeError(f"Mode {mode} is out of range for an order-{order} tensor")


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-`mode` unfolding: rows index that mode, the rest flatten in ascending order."""
    _check_mode(t.ndim, mode)
    return np.moveaxis(t, mode - 1, 0).reshape(t.shape[mode - 1], -1)


def fold(matrix: np.ndarray, mode: int, shape: Sequence[int]) -> np.ndarray:
    """Inverse of `unfold` for a tensor of the given shape."""
    shape = tuple(shape)
    _check_mode(len(shape), mode)
    moved = (shape[mode - 1],) + shape[: mode - 1] + shape[mode:]
    if matrix.shape != (moved[0], int(np.prod(moved[1:]))):
        raise ShapeMismatchError(f"Matrix of shape {matrix.shape} cannot fold into {shape} along mode {mode}")
    return np.moveaxis(matrix.reshape(moved), 0, mode - 1)


def unfolding_shape(shape: Sequence[int], mode: int) -> tuple:
    """(a_m, b_m): the mode extent and the product of the others."""
    _check_mode(len(shape), mode)
    extent = int(shape[mode - 1])
    return extent, int(np.prod(shape)) // extent


def mode_product(t: np.ndarray, m: np.ndarray, mode: int, operator: str = "mode_product") -> np.ndarray:
    """
    t ×_mode m for m of shape (Q, P_mode): the mode extent becomes Q.
    """
    _check_mode(t.ndim, mode)
    if m.ndim != 2 or m.shape[1] != t.shape[mode - 1]:
        raise ShapeMismatchError(
            f"Matrix of shape {m.shape} cannot multiply mode {mode} of extent {t.shape[mode - 1]}"
        )
    labels = _LABELS[: t.ndim]
    contracted = labels[mode - 1]
    output = labels.replace(contracted, "q")
    return contract(f"{labels},q{contracted}->{output}", t, m, operator=operator)


def orthogonalize(m: np.ndarray, seed: int = 0) -> np.ndarray:
    """
    Modified Gram-Schmidt with one re-orthogonalization pass.

    A column whose residual collapses (linearly dependent on the earlier
    ones) is replaced by a seeded random direction, so the output always has
    orthonormal columns and is deterministic for a fixed input.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeMismatchError(f"orthogonalize expects a matrix, got shape {m.shape}")
    rows, cols = m.shape
    if rows < cols:
        raise ShapeMismatchError(f"Cannot orthonormalize {cols} columns in dimension {rows}")
    require_finite(m, "orthogonalize input")

    q = np.empty_like(m)
    rng = None
    for j in range(cols):
        column_norm = np.linalg.norm(m[:, j])
        v = _project_out(m[:, j].copy(), q, j)
        norm = np.linalg.norm(v)
        while norm <= COLLAPSE_TOLERANCE * column_norm or norm == 0.0:
            if rng is None:
                rng = np.random.default_rng(seed)
            logger.debug(f"Column {j} collapsed during Gram-Schmidt; redrawing")
            candidate = rng.standard_normal(rows)
            column_norm = np.linalg.norm(candidate)
            v = _project_out(candidate, q, j)
            norm = np.linalg.norm(v)
        q[:, j] = v / norm

    charge("orthogonalize", 2 * rows * cols * cols, 2 * rows * cols * cols)
    return q


def _project_out(v: np.ndarray, q: np.ndarray, j: int) -> np.ndarray:
    for _ in range(2):
        for i in range(j):
            v -= (q[:, i] @ v) * q[:, i]
    return v


def explained_variance(singular_values: np.ndarray) -> np.ndarray:
    """Share of squared Frobenius norm carried by each singular value."""
    energy = np.square(singular_values)
    total = energy.sum()
    if total == 0.0:
        raise ZeroTensorError("Explained variance is undefined for an all-zero matrix")
    return energy / total


def select_rank(singular_values: np.ndarray, epsilon: float) -> int:
    """Smallest K >= 1 whose cumulative explained variance reaches epsilon."""
    cumulative = np.cumsum(explained_variance(singular_values))
    hits = np.nonzero(cumulative >= epsilon - RANK_TOLERANCE)[0]
    rank = int(hits[0]) + 1 if hits.size else len(singular_values)
    return max(1, min(rank, len(singular_values)))


def thin_svd(w: np.ndarray):
    """LAPACK gesvd with a stable descending sort; charges 6mn^2 + 20n^3."""
    u, s, vt = linalg.svd(w, full_matrices=False, lapack_driver="gesvd")
    order = np.argsort(-s, kind="stable")
    m, n = max(w.shape), min(w.shape)
    cost = 6 * m * n * n + 20 * n ** 3
    charge("svd", cost // 2, cost - cost // 2)
    return u[:, order], s[order], vt[order]


def truncated_svd(w: np.ndarray, epsilon: float = 1.0, rank: Optional[int] = None) -> TruncatedSVD:
    """
    Explained-variance truncated SVD.

    Args:
        w: O x I matrix with at least one nonzero entry
        epsilon: threshold in [0, 1]; K is the smallest rank reaching it
        rank: fixed K overriding epsilon

    Returns:
        TruncatedSVD(left=U_K * s_K, right=Vt_K, rank=K, singular_values=s)
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ShapeMismatchError(f"truncated_svd expects a matrix, got shape {w.shape}")
    if not 0.0 <= epsilon <= 1.0:
        raise TensorError(f"epsilon must lie in [0, 1], got {epsilon}")
    require_finite(w, "matrix")
    if not np.any(w):
        raise ZeroTensorError("Cannot decompose an all-zero matrix")

    u, s, vt = thin_svd(w)
    if rank is None:
        rank = select_rank(s, epsilon)
    elif not 1 <= rank <= len(s):
        raise TensorError(f"rank must lie in [1, {len(s)}], got {rank}")

    return TruncatedSVD(u[:, :rank] * s[:rank], vt[:rank].copy(), int(rank), s)


def finite_difference_gradient(f: Callable[[np.ndarray], float], t: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, entry by entry."""
    if h <= 0:
        raise TensorError(f"Step size must be positive, got {h}")
    t = np.array(t, dtype=np.float64)
    grad = np.zeros_like(t)
    for index in np.ndindex(t.shape):
        original = t[index]
        t[index] = original + h
        upper = f(t)
        t[index] = original - h
        lower = f(t)
        t[index] = original
        grad[index] = (upper - lower) / (2.0 * h)
    return grad
