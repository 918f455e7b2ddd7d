"""
Perplexity scan: how much each layer's weight gradient degrades when its
cached input is HOSVD-compressed at a given explained-variance threshold.

The model is driven through a small protocol:

    model.subspace_layers        layers with `name` and `last_probe`
    model.probing(epsilon)       context in which those layers cache their
                                 dense input, compare dense and compressed
                                 weight gradients and store a GradientProbe
    model.loss_and_grad(x, y)    one forward and backward pass

A row of the table is non-increasing in the threshold: a column whose
measured perplexity exceeds that of a lower threshold carries the
lower-threshold entry, ranks included.
"""
import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from autodiff.services.lowrank_linear import grad_weight_dense, grad_weight_lowrank
from rank_select.services.selection import PerplexityTable, RankSelectionError, check_thresholds
from subspace.services.activation_subspace import hosvd
from tensor_core.services.tensor_ops import ZeroTensorError

logger = logging.getLogger(__name__)


@dataclass
class GradientProbe:
    epsilon: float
    ranks: Tuple[int, ...]
    dims: Tuple[int, ...]
    dense_grad: np.ndarray
    lowrank_grad: np.ndarray

    @property
    def perplexity(self) -> float:
        return float(np.linalg.norm(self.dense_grad - self.lowrank_grad))


def probe_gradient(a: np.ndarray, dy: np.ndarray, epsilon: float) -> GradientProbe:
    """Dense weight gradient against the one computed from HOSVD-eps of `a`."""
    try:
        tucker = hosvd(a, epsilon=epsilon)
    except ZeroTensorError as exc:
        raise RankSelectionError(f"Degenerate held-out batch: {exc}") from exc
    return GradientProbe(
        epsilon=float(epsilon),
        ranks=tucker.ranks,
        dims=tuple(a.shape),
        dense_grad=grad_weight_dense(a, dy),
        lowrank_grad=grad_weight_lowrank(tucker, dy),
    )


def perplexity_scan(model, heldout_x: np.ndarray, heldout_y: np.ndarray, thresholds: Sequence[float]) -> PerplexityTable:
    thresholds = tuple(float(t) for t in thresholds)
    check_thresholds(thresholds)
    layers = list(model.subspace_layers)
    if not layers:
        raise RankSelectionError("Model has no compressible layers to scan")
    if len(heldout_x) == 0:
        raise RankSelectionError("Held-out batch is empty")

    perplexity = np.zeros((len(layers), len(thresholds)))
    ranks = None
    dims = [None] * len(layers)

    for j, epsilon in enumerate(thresholds):
        with model.probing(epsilon):
            model.loss_and_grad(heldout_x, heldout_y)
            for i, layer in enumerate(layers):
                probe = layer.last_probe
                if probe is None:
                    raise RankSelectionError(f"Layer {layer.name} produced no gradient probe")
                if ranks is None:
                    ranks = np.zeros((len(layers), len(thresholds), len(probe.ranks)), dtype=np.int64)
                perplexity[i, j] = probe.perplexity
                ranks[i, j] = probe.ranks
                dims[i] = probe.dims
        logger.debug(f"Scanned threshold {epsilon}: perplexity {perplexity[:, j].tolist()}")

    names = [layer.name for layer in layers]
    adjusted = [names[i] for i in range(len(layers)) if _keep_running_best(perplexity[i], ranks[i])]
    if adjusted:
        logger.debug(f"Carried lower-threshold entries forward for {adjusted}")
    return PerplexityTable(thresholds, perplexity, ranks, dims, names)


def _keep_running_best(perplexity: np.ndarray, ranks: np.ndarray) -> bool:
    """
    Make one layer's row non-increasing in the threshold: column j takes the
    entry (perplexity and ranks) of the lowest-perplexity column <= j, the
    earliest on ties. Returns whether any column changed.
    """
    best, changed = 0, False
    for j in range(len(perplexity)):
        if perplexity[j] < perplexity[best]:
            best = j
        elif best != j:
            perplexity[j] = perplexity[best]
            ranks[j] = ranks[best]
            changed = True
    return changed
