"""
Sweep the closed-form cost model over a grid of layer shapes and ranks.

Usage:
    python manage.py cost --batch 32 --tokens 16 --features 64,128,256 --rank 4
    python manage.py cost --batch 8 --spatial 4x4,8x8 --in-features 96 --out-features 384 \
        --rank 4,8,16,full --activation-ranks "2x2x2x8;full" --svg
"""
import logging
from typing import Any, Dict, List

from core.utils.artifacts import write_csv, write_json, utc_timestamp
from core.utils.commands import EngineCommand
from core.utils.parsing import parse_dims, parse_list
from cost_model.serializers import CostGridSerializer
from cost_model.services.charts import ratio_chart
from cost_model.services.cost_formulas import CSV_COLUMNS, FULL, SweepGrid, rows, sweep

logger = logging.getLogger(__name__)


def _rank_vectors(value) -> List[Any]:
    if isinstance(value, str):
        value = [part for part in value.split(";") if part.strip()]
    out = []
    for item in value:
        if isinstance(item, str) and item.strip().lower() == FULL:
            out.append(FULL)
        else:
            out.append(list(parse_dims(item)))
    return out


class Command(EngineCommand):
    help = "Closed-form FLOP and memory ratios of vanilla versus WASI training over a grid"
    config_section_name = "cost"

    def add_engine_arguments(self, parser):
        parser.add_argument("--batch", help="Batch sizes, e.g. 8,32")
        parser.add_argument("--tokens", help="Token counts N for 3-D activations, e.g. 16,64")
        parser.add_argument("--spatial", help="H x W windows for 4-D activations, e.g. 4x4,8x8")
        parser.add_argument("--features", help="Square layers, sets I = O, e.g. 64,128,256")
        parser.add_argument("--in-features", help="Input widths I")
        parser.add_argument("--out-features", help="Output widths O (default: same as I)")
        parser.add_argument("--rank", help="Weight ranks K or 'full', e.g. 4,8,full")
        parser.add_argument("--activation-ranks", help="';'-separated mode ranks or 'full', e.g. '2x4x8;full'")
        parser.add_argument("--svg", action="store_true", default=None, help="Also write cost.svg")

    def run(self, options: Dict[str, Any]):
        section = self.section(
            batch=options.get("batch"),
            tokens=options.get("tokens"),
            spatial=options.get("spatial"),
            features=options.get("features"),
            in_features=options.get("in_features"),
            out_features=options.get("out_features"),
            rank=options.get("rank"),
            activation_ranks=options.get("activation_ranks"),
            svg=options.get("svg"),
        )
        if section.get("features") and (section.get("in_features") or section.get("out_features")):
            raise self.usage_error("--features cannot be combined with --in-features/--out-features")

        data: Dict[str, Any] = {}
        if section.get("batch") is not None:
            data["batch"] = parse_list(section["batch"], int)
        if section.get("tokens") is not None:
            data["tokens"] = parse_list(section["tokens"], int)
        if section.get("spatial") is not None:
            spatial = section["spatial"]
            data["spatial"] = [list(parse_dims(s)) for s in (spatial.split(",") if isinstance(spatial, str) else spatial)]
        square = section.get("features")
        if square is not None:
            data["in_features"] = parse_list(square, int)
        elif section.get("in_features") is not None:
            data["in_features"] = parse_list(section["in_features"], int)
        if section.get("out_features") is not None:
            data["out_features"] = parse_list(section["out_features"], int)
        if section.get("rank") is not None:
            data["rank"] = parse_list(section["rank"], str)
        if section.get("activation_ranks") is not None:
            data["activation_ranks"] = _rank_vectors(section["activation_ranks"])
        if section.get("svg") is not None:
            data["svg"] = section["svg"]

        serializer = CostGridSerializer(data=data)
        serializer.is_valid(raise_exception=True)
        params = serializer.validated_data

        in_features = params["in_features"]
        if square is not None or not params.get("out_features"):
            features = [(i, i) for i in in_features]
        else:
            features = [(i, o) for i in in_features for o in params["out_features"]]
        grid = SweepGrid(
            batches=params["batch"],
            spatial=[(n,) for n in params.get("tokens") or []] or [tuple(s) for s in params["spatial"]],
            features=features,
            ranks=params["rank"],
            activation_ranks=[r if r == FULL else tuple(r) for r in params["activation_ranks"]],
        )

        reports = sweep(grid)
        output_dir = self.output_dir(options, section)
        csv_path = write_csv(output_dir / "cost.csv", CSV_COLUMNS, rows(reports))
        write_json(output_dir / "cost.json", {
            "created_at": utc_timestamp(),
            "grid": {
                "batch": grid.batches,
                "spatial": [list(s) for s in grid.spatial],
                "features": [list(f) for f in grid.features],
                "rank": grid.ranks,
                "activation_ranks": [r if r == FULL else list(r) for r in grid.activation_ranks],
            },
            "rows": len(reports),
        })
        if params["svg"]:
            ratio_chart(reports, output_dir / "cost.svg")

        self.stdout.write(self.style.SUCCESS(f"Wrote {len(reports)} grid points to {csv_path}"))
