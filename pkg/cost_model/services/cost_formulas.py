"""
Closed-form FLOP and memory accounting of one linear layer trained vanilla
versus in weight and activation subspaces.

FLOPs count a multiply-add as 2. For 4-D activations (B, H, W, I) the dense
terms use H*W in place of N. d' in the ASI overhead is the product of the
other mode extents, the column count of the mode-m unfolding.
"""
import itertools
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from rank_select.services.selection import activation_memory
from subspace.services.activation_subspace import RankOutOfBoundsError, rank_bounds

logger = logging.getLogger(__name__)

FULL = "full"


class InvalidLayerShapeError(ValueError):
    pass


class ZeroDenominatorError(InvalidLayerShapeError):
    """A ratio whose WASI-side count is zero."""


def _check_extents(extents: Sequence[int]) -> None:
    if any(int(v) < 1 for v in extents):
        raise InvalidLayerShapeError(f"Layer extents must be positive, got {tuple(extents)}")


@dataclass(frozen=True)
class LayerShape:
    batch: int
    spatial: Tuple[int, ...]
    in_features: int
    out_features: int
    rank: int
    activation_ranks: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "spatial", tuple(int(s) for s in self.spatial))
        object.__setattr__(self, "activation_ranks", tuple(int(r) for r in self.activation_ranks))
        extents = (self.batch, *self.spatial, self.in_features, self.out_features)
        if len(self.spatial) not in (1, 2):
            raise InvalidLayerShapeError(f"Expected tokens N or a H x W window, got {self.spatial}")
        _check_extents(extents)
        if not 1 <= self.rank <= min(self.in_features, self.out_features):
            raise InvalidLayerShapeError(
                f"Weight rank {self.rank} must lie in [1, {min(self.in_features, self.out_features)}]"
            )
        try:
            activation_memory(self.activation_ranks, self.dims)
        except RankOutOfBoundsError as exc:
            raise InvalidLayerShapeError(str(exc)) from exc

    @classmethod
    def build(
        cls,
        batch: int,
        spatial: Union[int, Sequence[int]],
        in_features: int,
        out_features: int,
        rank: Union[int, str] = FULL,
        activation_ranks: Union[Sequence[int], str] = FULL,
    ) -> "LayerShape":
        """Constructor accepting "full" for either rank."""
        spatial = (spatial,) if isinstance(spatial, int) else tuple(spatial)
        _check_extents((batch, *spatial, in_features, out_features))
        if rank == FULL:
            rank = min(in_features, out_features)
        if activation_ranks == FULL:
            activation_ranks = rank_bounds((batch, *spatial, in_features))
        return cls(int(batch), spatial, int(in_features), int(out_features), int(rank), tuple(activation_ranks))

    @property
    def tokens(self) -> int:
        return math.prod(self.spatial)

    @property
    def dims(self) -> Tuple[int, ...]:
        return (self.batch, *self.spatial, self.in_features)

    @property
    def order(self) -> int:
        return len(self.dims)


@dataclass
class CostReport:
    shape: LayerShape
    f_vanilla: int = 0
    b_vanilla: int = 0
    f_wasi: int = 0
    o_wsi: int = 0
    o_asi: int = 0
    b_wasi: int = 0
    m_w_vanilla: int = 0
    m_a_vanilla: int = 0
    m_w_wasi: int = 0
    m_a_wasi: int = 0
    c_training: Optional[float] = None
    c_inference: Optional[float] = None
    s_training: Optional[float] = None
    s_inference: Optional[float] = None

    @property
    def training_flops_vanilla(self) -> int:
        return self.f_vanilla + self.b_vanilla

    @property
    def training_flops_wasi(self) -> int:
        return self.f_wasi + self.o_wsi + self.o_asi + self.b_wasi

    def to_row(self) -> Dict[str, Any]:
        s = self.shape
        row = {
            "B": s.batch,
            "N": s.tokens,
            "H": s.spatial[0] if len(s.spatial) == 2 else "",
            "W": s.spatial[1] if len(s.spatial) == 2 else "",
            "I": s.in_features,
            "O": s.out_features,
            "K": s.rank,
            "ranks": "x".join(str(r) for r in s.activation_ranks),
        }
        row.update({k: v for k, v in asdict(self).items() if k != "shape"})
        return row


CSV_COLUMNS = [
    "B", "N", "H", "W", "I", "O", "K", "ranks",
    "f_vanilla", "b_vanilla", "f_wasi", "o_wsi", "o_asi", "b_wasi",
    "m_w_vanilla", "m_a_vanilla", "m_w_wasi", "m_a_wasi",
    "c_training", "c_inference", "s_training", "s_inference",
]


def flops_vanilla(s: LayerShape) -> Tuple[int, int]:
    dense = s.batch * s.tokens * s.in_features * s.out_features
    return 2 * dense, 4 * dense


def _z_terms(s: LayerShape) -> int:
    """Multiplies of the staged low-rank weight-gradient contraction."""
    o, i = s.out_features, s.in_features
    if s.order == 3:
        b, n, _ = s.dims
        r1, r2, r3 = s.activation_ranks
        return b * n * o * r1 + r1 * r2 * r3 * n + r1 * r3 * i * n + r1 * i * o * n
    b, h, w, _ = s.dims
    r1, r2, r3, r4 = s.activation_ranks
    return b * h * w * o * r1 + r1 * r2 * h * w * o + r1 * r2 * r3 * w * o + r1 * r2 * r3 * r4 * o + o * r4 * i


def flops_wasi(s: LayerShape) -> Tuple[int, int, int, int]:
    """(F_wasi, O_wsi, O_asi, B_wasi)."""
    lowrank_pass = 2 * s.batch * s.tokens * s.rank * (s.in_features + s.out_features)
    o_wsi = 4 * s.in_features * s.out_features * s.rank + 2 * s.out_features * s.rank ** 2
    total = math.prod(s.dims)
    o_asi = sum(4 * d * (total // d) * r + 2 * d * r * r for d, r in zip(s.dims, s.activation_ranks))
    return lowrank_pass, o_wsi, o_asi, lowrank_pass + _z_terms(s)


def memory_counts(s: LayerShape) -> Tuple[int, int, int, int]:
    """(M_w_vanilla, M_a_vanilla, M_w_wasi, M_a_wasi) in elements."""
    return (
        s.in_features * s.out_features,
        math.prod(s.dims),
        s.rank * (s.in_features + s.out_features),
        activation_memory(s.activation_ranks, s.dims),
    )


def _quotient(numerator: int, denominator: int, name: str) -> float:
    if denominator <= 0:
        raise ZeroDenominatorError(f"{name} has a zero denominator")
    return numerator / denominator


def ratios(report: CostReport) -> Tuple[float, float, float, float]:
    """(C_training, C_inference, S_training, S_inference)."""
    return (
        _quotient(report.m_w_vanilla + report.m_a_vanilla, report.m_w_wasi + report.m_a_wasi, "C_training"),
        _quotient(report.m_w_vanilla, report.m_w_wasi, "C_inference"),
        _quotient(report.training_flops_vanilla, report.training_flops_wasi, "S_training"),
        _quotient(report.f_vanilla, report.f_wasi, "S_inference"),
    )


def cost_report(s: LayerShape) -> CostReport:
    report = CostReport(s)
    report.f_vanilla, report.b_vanilla = flops_vanilla(s)
    report.f_wasi, report.o_wsi, report.o_asi, report.b_wasi = flops_wasi(s)
    report.m_w_vanilla, report.m_a_vanilla, report.m_w_wasi, report.m_a_wasi = memory_counts(s)
    report.c_training, report.c_inference, report.s_training, report.s_inference = ratios(report)
    if report.m_w_wasi > report.m_w_vanilla:
        logger.debug(f"Rank {s.rank} factors outgrow the dense {s.out_features}x{s.in_features} weight")
    return report


@dataclass
class SweepGrid:
    batches: List[int]
    spatial: List[Tuple[int, ...]]
    features: List[Tuple[int, int]]
    ranks: List[Union[int, str]] = field(default_factory=lambda: [FULL])
    activation_ranks: List[Union[Tuple[int, ...], str]] = field(default_factory=lambda: [FULL])


def sweep(grid: SweepGrid) -> List[CostReport]:
    """
    One CostReport per grid point, in row-major grid order. Points whose
    ranks do not fit the shape are skipped.
    """
    axes = (grid.batches, grid.spatial, grid.features, grid.ranks, grid.activation_ranks)
    if not all(axes):
        raise InvalidLayerShapeError("Every sweep axis needs at least one value")

    reports = []
    for batch, spatial, (i, o), rank, act_ranks in itertools.product(*axes):
        try:
            shape = LayerShape.build(batch, spatial, i, o, rank, act_ranks)
        except InvalidLayerShapeError as exc:
            logger.debug(f"Skipping grid point B={batch} {spatial} {i}x{o} K={rank} r={act_ranks}: {exc}")
            continue
        reports.append(cost_report(shape))

    if not reports:
        raise InvalidLayerShapeError("No grid point has ranks that fit its shape")
    return reports


def rows(reports: Iterable[CostReport]) -> List[List[Any]]:
    """CSV rows in CSV_COLUMNS order, ratios with 6 significant digits."""
    out = []
    for report in reports:
        row = report.to_row()
        out.append([f"{row[c]:.6g}" if c.startswith(("c_", "s_")) else row[c] for c in CSV_COLUMNS])
    return out
