"""
Multiply/add accounting for the engine's linear algebra.

Every product in the low-rank and dense paths goes through `contract`, a
two-operand einsum that charges the innermost active OpCounter. Routines
whose cost is not a single contraction (Gram-Schmidt, SVD) charge an
analytic count through `charge`. Elementwise work is never counted.

Usage:
    counter = OpCounter("fc1")
    with counter.activate():
        y = contract("bni,ki->bnk", a, r)
    counter.snapshot()
"""
import logging
import math
import re
from collections import Counter
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Any, Dict, Iterator, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

_SUBSCRIPTS = re.compile(r"^([a-zA-Z]+),([a-zA-Z]+)->([a-zA-Z]*)$")

_active_counters: ContextVar[Tuple[Optional["OpCounter"], ...]] = ContextVar("wasi_active_counters", default=())


class OpCounter:
    """Running multiply/add totals plus the largest intermediate seen."""

    def __init__(self, name: str = "counter"):
        self.name = name
        self.reset()

    def reset(self) -> None:
        self.multiplies = 0
        self.adds = 0
        self.by_operator: Counter = Counter()
        self.peak_intermediate = 0

    @property
    def flops(self) -> int:
        return self.multiplies + self.adds

    def record(self, operator: str, multiplies: int, adds: int) -> None:
        multiplies, adds = int(multiplies), int(adds)
        self.multiplies += multiplies
        self.adds += adds
        self.by_operator[operator] += multiplies + adds

    def note_intermediate(self, elements: int) -> None:
        if elements > self.peak_intermediate:
            self.peak_intermediate = int(elements)

    def merge(self, other: "OpCounter") -> None:
        """Fold another counter (e.g. a data-parallel worker's) into this one."""
        self.multiplies += other.multiplies
        self.adds += other.adds
        self.by_operator.update(other.by_operator)
        self.note_intermediate(other.peak_intermediate)

    def snapshot(self) -> Dict[str, Any]:
        return {
            "multiplies": self.multiplies,
            "adds": self.adds,
            "flops": self.flops,
            "peak_intermediate": self.peak_intermediate,
            "by_operator": dict(sorted(self.by_operator.items())),
        }

    @contextmanager
    def activate(self) -> Iterator["OpCounter"]:
        token = _active_counters.set(_active_counters.get() + (self,))
        try:
            yield self
        finally:
            _active_counters.reset(token)

    def __repr__(self) -> str:
        return f"OpCounter({self.name!r}, multiplies={self.multiplies}, adds={self.adds})"


@contextmanager
def suspended() -> Iterator[None]:
    """Run a block without charging any counter."""
    token = _active_counters.set(_active_counters.get() + (None,))
    try:
        yield
    finally:
        _active_counters.reset(token)


def current_counter() -> Optional[OpCounter]:
    """Innermost active counter, or None when nothing is being measured."""
    stack = _active_counters.get()
    return stack[-1] if stack else None


def charge(operator: str, multiplies: int, adds: int) -> None:
    """Charge an analytic cost to the active counter, if any."""
    counter = current_counter()
    if counter is not None:
        counter.record(operator, multiplies, adds)


def contract(
    subscripts: str,
    a: np.ndarray,
    b: np.ndarray,
    operator: Optional[str] = None,
    intermediate: bool = False,
) -> np.ndarray:
    """
    Counted two-operand einsum with explicit subscripts (no ellipsis).

    Multiplies are the product of every distinct index extent; adds are
    multiplies minus the output size whenever an index is summed away.

    Args:
        subscripts: e.g. "bni,ki->bnk"
        a, b: operands whose ranks match the subscript groups
        operator: label for the per-operator breakdown (defaults to subscripts)
        intermediate: record the result size as a materialized intermediate
    """
    match = _SUBSCRIPTS.match(subscripts.replace(" ", ""))
    if match is None:
        raise ValueError(f"Unsupported contraction '{subscripts}'")
    left, right, out = match.groups()

    extents: Dict[str, int] = {}
    for labels, operand in ((left, a), (right, b)):
        if len(labels) != operand.ndim:
            raise ValueError(f"'{labels}' does not match operand of shape {operand.shape}")
        for label, extent in zip(labels, operand.shape):
            if extents.setdefault(label, extent) != extent:
                raise ValueError(
                    f"Index '{label}' has extent {extents[label]} and {extent} in '{subscripts}'"
                )

    result = np.einsum(subscripts, a, b, optimize=True)

    counter = current_counter()
    if counter is not None:
        multiplies = math.prod(extents.values())
        summed = set(extents) - set(out)
        adds = multiplies - result.size if summed else 0
        counter.record(operator or subscripts, multiplies, adds)
        if intermediate:
            counter.note_intermediate(result.size)
    return result
