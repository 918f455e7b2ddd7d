"""
Per-layer activation rank plans.

A PerplexityTable holds, for every compressible layer i and explained-variance
threshold j, the weight-gradient error P[i, j] caused by compressing the
layer's input at that threshold, and the mode ranks HOSVD picked. A plan
picks one threshold index per layer:

    select_budget             min sum P   s.t. sum M <= budget
    select_perplexity_target  min sum M   s.t. sum P <= target

with M the Tucker storage of the chosen ranks. Both searches filter dominated
options per layer and then run an exact branch-and-bound over the rest.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from subspace.services.activation_subspace import check_ranks

logger = logging.getLogger(__name__)

# Relative slack applied to the perplexity target so that a target copied
# from an existing plan total stays feasible.
TARGET_TOLERANCE = 1e-12
PRUNE_SLACK = 1e-9


class RankSelectionError(ValueError):
    """Bad perplexity table or scan input."""


class InfeasibleConstraintError(RankSelectionError):
    """No plan satisfies the memory budget or perplexity target."""


def activation_memory(ranks: Sequence[int], dims: Sequence[int]) -> int:
    """prod(r) + sum(D_m * r_m): elements stored by a Tucker form of these ranks."""
    ranks = check_ranks(dims, ranks)
    return math.prod(ranks) + sum(int(d) * r for d, r in zip(dims, ranks))


@dataclass
class PerplexityTable:
    thresholds: Tuple[float, ...]
    perplexity: np.ndarray
    ranks: np.ndarray
    dims: List[Tuple[int, ...]]
    layer_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.thresholds = tuple(float(t) for t in self.thresholds)
        self.perplexity = np.asarray(self.perplexity, dtype=np.float64)
        self.ranks = np.asarray(self.ranks, dtype=np.int64)
        self.dims = [tuple(int(d) for d in dims) for dims in self.dims]
        layers, columns = len(self.dims), len(self.thresholds)

        if layers == 0 or columns == 0:
            raise RankSelectionError("A perplexity table needs at least one layer and one threshold")
        check_thresholds(self.thresholds)
        if self.perplexity.shape != (layers, columns):
            raise RankSelectionError(f"Perplexity matrix {self.perplexity.shape} does not match {layers}x{columns}")
        if not np.all(np.isfinite(self.perplexity)) or np.any(self.perplexity < 0):
            raise RankSelectionError("Perplexity entries must be finite and nonnegative")
        if self.ranks.ndim != 3 or self.ranks.shape[:2] != (layers, columns):
            raise RankSelectionError(f"Rank tensor {self.ranks.shape} does not match {layers}x{columns}xM")
        for i, dims in enumerate(self.dims):
            if len(dims) != self.ranks.shape[2]:
                raise RankSelectionError(f"Layer {i} has {len(dims)} modes, the rank tensor has {self.ranks.shape[2]}")
            for j in range(columns):
                check_ranks(dims, self.ranks[i, j])
            if np.any(np.diff(self.ranks[i], axis=0) < 0):
                raise RankSelectionError(f"Layer {i} ranks decrease as the threshold grows")
        if not self.layer_names:
            self.layer_names = [f"layer{i}" for i in range(layers)]
        elif len(self.layer_names) != layers:
            raise RankSelectionError(f"{len(self.layer_names)} layer names for {layers} layers")

    @property
    def num_layers(self) -> int:
        return len(self.dims)

    def memory(self, layer: int, column: int) -> int:
        return activation_memory(self.ranks[layer, column], self.dims[layer])

    def memory_matrix(self) -> np.ndarray:
        return np.array(
            [[self.memory(i, j) for j in range(len(self.thresholds))] for i in range(self.num_layers)],
            dtype=np.int64,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "thresholds": list(self.thresholds),
            "layers": self.layer_names,
            "perplexity": self.perplexity.tolist(),
            "ranks": self.ranks.tolist(),
            "dims": [list(d) for d in self.dims],
            "memory": self.memory_matrix().tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PerplexityTable":
        return cls(
            thresholds=data["thresholds"],
            perplexity=data["perplexity"],
            ranks=data["ranks"],
            dims=data["dims"],
            layer_names=list(data.get("layers") or []),
        )


@dataclass
class RankPlan:
    indices: Tuple[int, ...]
    thresholds: Tuple[float, ...]
    ranks: List[Tuple[int, ...]]
    memory: int
    perplexity: float
    objective: str
    constraint: float
    layer_names: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "objective": self.objective,
            "constraint": self.constraint,
            "memory": self.memory,
            "perplexity": self.perplexity,
            "layers": [
                {"name": name, "index": j, "threshold": eps, "ranks": list(r)}
                for name, j, eps, r in zip(self.layer_names, self.indices, self.thresholds, self.ranks)
            ],
        }


def check_thresholds(thresholds: Sequence[float]) -> None:
    if not thresholds:
        raise RankSelectionError("No thresholds given")
    if any(not 0.0 < t <= 1.0 for t in thresholds):
        raise RankSelectionError(f"Thresholds must lie in (0, 1], got {list(thresholds)}")
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise RankSelectionError(f"Thresholds must be strictly ascending, got {list(thresholds)}")


def plan_from_indices(table: PerplexityTable, indices: Sequence[int], objective: str, constraint: float) -> RankPlan:
    indices = tuple(int(j) for j in indices)
    return RankPlan(
        indices=indices,
        thresholds=tuple(table.thresholds[j] for j in indices),
        ranks=[tuple(int(r) for r in table.ranks[i, j]) for i, j in enumerate(indices)],
        memory=sum(table.memory(i, j) for i, j in enumerate(indices)),
        perplexity=math.fsum(float(table.perplexity[i, j]) for i, j in enumerate(indices)),
        objective=objective,
        constraint=constraint,
        layer_names=list(table.layer_names),
    )


# ───────────────────────────────────────────────────────────
# Search
# ───────────────────────────────────────────────────────────

@dataclass(frozen=True)
class _Option:
    index: int
    perplexity: float
    memory: int


def _frontier(table: PerplexityTable, memory: np.ndarray, layer: int) -> List[_Option]:
    """
    Non-dominated thresholds of one layer, sorted by perplexity ascending and
    memory descending. For equal (perplexity, memory) the smaller index wins.
    """
    options = sorted(
        (_Option(j, float(table.perplexity[layer, j]), int(memory[layer, j])) for j in range(len(table.thresholds))),
        key=lambda o: (o.perplexity, o.memory, o.index),
    )
    kept: List[_Option] = []
    for option in options:
        if not kept or option.memory < kept[-1].memory:
            kept.append(option)
    return kept


def _suffix_minima(frontiers: List[List[_Option]]) -> Tuple[List[float], List[int]]:
    min_p, min_m = [0.0], [0]
    for options in reversed(frontiers):
        min_p.append(min_p[-1] + min(o.perplexity for o in options))
        min_m.append(min_m[-1] + min(o.memory for o in options))
    return min_p[::-1], min_m[::-1]


def select_budget(table: PerplexityTable, budget: int) -> RankPlan:
    """Least total perplexity whose activation memory fits in `budget` elements."""
    memory = table.memory_matrix()
    floor = int(memory.min(axis=1).sum())
    if budget < floor:
        raise InfeasibleConstraintError(
            f"Memory budget {budget} is below the smallest possible plan ({floor} elements)"
        )

    frontiers = [_frontier(table, memory, i) for i in range(table.num_layers)]
    min_p, min_m = _suffix_minima(frontiers)
    best: Optional[Tuple[float, int, Tuple[int, ...]]] = None
    chosen: List[_Option] = []

    def visit(layer: int, used_m: int, used_p: float):
        nonlocal best
        if layer == len(frontiers):
            key = (math.fsum(o.perplexity for o in chosen), used_m, tuple(o.index for o in chosen))
            if best is None or key < best:
                best = key
            return
        for option in frontiers[layer]:
            m = used_m + option.memory
            if m + min_m[layer + 1] > budget:
                continue
            p = used_p + option.perplexity
            if best is not None and p + min_p[layer + 1] > best[0] + PRUNE_SLACK * max(1.0, best[0]):
                # frontier is sorted by perplexity, later options only cost more
                break
            chosen.append(option)
            visit(layer + 1, m, p)
            chosen.pop()

    visit(0, 0, 0.0)
    plan = plan_from_indices(table, best[2], "budget", float(budget))
    logger.info(f"Budget {budget}: thresholds {plan.thresholds}, memory {plan.memory}, perplexity {plan.perplexity:.6g}")
    return plan


def select_perplexity_target(table: PerplexityTable, target: float) -> RankPlan:
    """Least activation memory whose total perplexity stays within `target`."""
    if math.isnan(target):
        raise RankSelectionError("Perplexity target is NaN")
    memory = table.memory_matrix()
    limit = target + TARGET_TOLERANCE * max(1.0, abs(target)) if math.isfinite(target) else target
    floor = math.fsum(float(p) for p in table.perplexity.min(axis=1))
    if floor > limit:
        raise InfeasibleConstraintError(
            f"Perplexity target {target:.6g} is below the smallest achievable total ({floor:.6g})"
        )

    frontiers = [sorted(_frontier(table, memory, i), key=lambda o: (o.memory, o.perplexity, o.index))
                 for i in range(table.num_layers)]
    min_p, min_m = _suffix_minima(frontiers)
    best: Optional[Tuple[int, float, Tuple[int, ...]]] = None
    chosen: List[_Option] = []

    def visit(layer: int, used_m: int, used_p: float):
        nonlocal best
        if layer == len(frontiers):
            total_p = math.fsum(o.perplexity for o in chosen)
            if total_p > limit:
                return
            key = (used_m, total_p, tuple(o.index for o in chosen))
            if best is None or key < best:
                best = key
            return
        for option in frontiers[layer]:
            m = used_m + option.memory
            if best is not None and m + min_m[layer + 1] > best[0]:
                break
            p = used_p + option.perplexity
            if p + min_p[layer + 1] > limit + PRUNE_SLACK * max(1.0, abs(limit)):
                continue
            chosen.append(option)
            visit(layer + 1, m, p)
            chosen.pop()

    visit(0, 0, 0.0)
    if best is None:
        raise InfeasibleConstraintError(f"No plan reaches perplexity target {target:.6g}")
    plan = plan_from_indices(table, best[2], "perplexity_target", float(target))
    logger.info(f"Target {target:.6g}: thresholds {plan.thresholds}, memory {plan.memory}, perplexity {plan.perplexity:.6g}")
    return plan
