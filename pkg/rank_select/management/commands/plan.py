"""
Plan per-layer activation ranks: scan perplexity on a held-out batch (or
read a saved table) and solve the budget or perplexity-target problem.

Usage:
    python manage.py plan --budget 4000 --data synthetic:easy
    python manage.py plan --perplexity-target 0.5 --thresholds 0.5,0.7,0.9,1.0
    python manage.py plan --budget 4000 --table runs/perplexity_table.json
"""
import logging
from typing import Any, Dict

from core.utils.artifacts import read_json, utc_timestamp, write_json
from core.utils.commands import EngineCommand
from core.utils.parsing import parse_list
from rank_select.serializers import PerplexityTableSerializer, PlanOptionsSerializer
from rank_select.services.perplexity import perplexity_scan
from rank_select.services.selection import PerplexityTable, select_budget, select_perplexity_target
from training.services.datasets import load_dataset
from training.services.models import ModelSpec, build_model
from training.services.trainer import heldout_batch

logger = logging.getLogger(__name__)

MODEL_KEYS = ("model", "tokens", "hidden", "width", "window")


class Command(EngineCommand):
    help = "Choose per-layer activation ranks under a memory budget or a perplexity target"
    config_section_name = "plan"

    def add_engine_arguments(self, parser):
        parser.add_argument("--budget", type=int, help="Activation memory budget in elements")
        parser.add_argument("--perplexity-target", type=float, help="Upper bound on total perplexity")
        parser.add_argument("--thresholds", help="Explained-variance thresholds to scan, e.g. 0.5,0.7,0.9,1.0")
        parser.add_argument("--table", help="Use a saved perplexity table JSON instead of scanning")
        parser.add_argument("--data", help="Dataset the held-out batch is taken from (default synthetic:easy)")
        parser.add_argument("--model", help="mlp, block or windowed (default mlp)")
        parser.add_argument("--batch-size", type=int, help="Held-out batch size (default 128)")

    def run(self, options: Dict[str, Any]):
        budget, target = options.get("budget"), options.get("perplexity_target")
        if budget is not None and target is not None:
            raise self.usage_error("--budget and --perplexity-target are mutually exclusive")
        section = self.section(
            budget=budget,
            perplexity_target=target,
            thresholds=options.get("thresholds"),
            table=options.get("table"),
            data=options.get("data"),
            model=options.get("model"),
            batch_size=options.get("batch_size"),
        )
        if budget is None and target is None and section.get("budget") is not None \
                and section.get("perplexity_target") is not None:
            raise self.usage_error("[plan] sets both budget and perplexity_target")

        given = {k: section[k] for k in ("budget", "perplexity_target", "table") if section.get(k) is not None}
        if section.get("thresholds") is not None:
            given["thresholds"] = parse_list(section["thresholds"], float)
        serializer = PlanOptionsSerializer(data=given)
        serializer.is_valid(raise_exception=True)
        params = serializer.validated_data
        if params.get("budget") is None and params.get("perplexity_target") is None:
            raise self.usage_error("Give one of --budget or --perplexity-target")

        seed = self.resolve_seed(options, section)
        if params.get("table"):
            table = self._read_table(params["table"])
        else:
            table = self._scan(section, params["thresholds"], seed)

        if params.get("budget") is not None:
            plan = select_budget(table, params["budget"])
        else:
            plan = select_perplexity_target(table, params["perplexity_target"])

        output_dir = self.output_dir(options, section)
        write_json(output_dir / "perplexity_table.json", {"created_at": utc_timestamp(), "seed": seed, **table.to_dict()})
        plan_path = write_json(output_dir / "rank_plan.json", {"created_at": utc_timestamp(), "seed": seed, **plan.to_dict()})
        self.stdout.write(self.style.SUCCESS(
            f"Plan uses {plan.memory} activation elements at total perplexity {plan.perplexity:.6g}; wrote {plan_path}"
        ))

    def _read_table(self, path) -> PerplexityTable:
        serializer = PerplexityTableSerializer(data=read_json(path))
        serializer.is_valid(raise_exception=True)
        return PerplexityTable.from_dict(serializer.validated_data)

    def _scan(self, section: Dict[str, Any], thresholds, seed: int) -> PerplexityTable:
        model_section = self.section("model")
        spec_values = {k: model_section[k] for k in MODEL_KEYS if model_section.get(k) is not None}
        if section.get("model"):
            spec_values["model"] = section["model"]
        dataset = load_dataset(section.get("data") or model_section.get("data") or "synthetic:easy", seed)
        spec = ModelSpec(
            kind=spec_values.pop("model", "mlp"),
            features=dataset.features,
            classes=dataset.num_classes,
            seed=seed,
            **spec_values,
        )
        model = build_model(spec)
        heldout_x, heldout_y = heldout_batch(dataset, int(section.get("batch_size") or 128))
        logger.info(f"Scanning {len(thresholds)} thresholds on {len(heldout_y)} held-out samples")
        return perplexity_scan(model, heldout_x, heldout_y, thresholds)
