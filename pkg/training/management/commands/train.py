"""
Train a toy classifier in one of the WASI modes and write the run record
(run.json, run.csv) plus a checkpoint.

Usage:
    python manage.py train --mode vanilla --data synthetic:easy
    python manage.py train --mode wasi --eps 1.0 --full-ranks --epochs 2
    python manage.py train --config run.toml --threads 2 --output-dir runs/wasi
"""
import logging
from typing import Any, Dict

from django.conf import settings

from core.utils.commands import EngineCommand
from core.utils.parsing import parse_dims, parse_list
from training.serializers import TrainConfigSerializer
from training.services.checkpoints import save_checkpoint
from training.services.datasets import load_dataset
from training.services.models import build_model
from training.services.trainer import TrainConfig, train

logger = logging.getLogger(__name__)

FLAG_KEYS = (
    "data", "model", "mode", "epsilon", "rank", "budget", "perplexity_target", "thresholds",
    "lr", "momentum", "weight_decay", "clip_norm", "epochs", "batch_size", "schedule",
    "warmup_steps", "min_lr", "threads", "wsi_variant", "update_sign", "warm_start_scope",
    "tokens", "hidden", "width", "window", "activation_ranks",
)


class Command(EngineCommand):
    help = "Train a toy classifier with WASI-compressed linear layers"
    config_section_name = "train"

    def add_engine_arguments(self, parser):
        parser.add_argument("--data", help="synthetic:<preset|k=v,...>, a CSV file or an IDX file")
        parser.add_argument("--model", help="mlp, block or windowed")
        parser.add_argument("--mode", help="wasi, wsi-only, asi-only, vanilla or svd-every-step")
        parser.add_argument("--eps", dest="epsilon", type=float, help="Explained-variance threshold (default 0.9)")
        parser.add_argument("--rank", type=int, help="Fixed weight rank K instead of --eps")
        parser.add_argument("--full-ranks", action="store_true", help="Keep every activation mode at full rank")
        parser.add_argument("--activation-ranks", help="';'-separated ranks per layer, e.g. '4x4x8;4x4x16'")
        parser.add_argument("--budget", type=int, help="Activation memory budget for the rank plan")
        parser.add_argument("--perplexity-target", type=float, help="Perplexity target for the rank plan")
        parser.add_argument("--thresholds", help="Thresholds scanned for the rank plan")
        parser.add_argument("--lr", type=float, help="Initial learning rate (default 0.05)")
        parser.add_argument("--momentum", type=float)
        parser.add_argument("--weight-decay", type=float)
        parser.add_argument("--clip-norm", type=float, help="Global L2 clipping threshold (default 2.0)")
        parser.add_argument("--epochs", type=int)
        parser.add_argument("--batch-size", type=int)
        parser.add_argument("--schedule", help="cosine or constant")
        parser.add_argument("--warmup-steps", type=int)
        parser.add_argument("--min-lr", type=float)
        parser.add_argument("--threads", type=int, help="Data-parallel shards (default WASI_THREADS)")
        parser.add_argument("--wsi-variant", help="refresh or verbatim")
        parser.add_argument("--update-sign", help="descent or literal")
        parser.add_argument("--warm-start-scope", help="iteration or epoch")
        parser.add_argument("--tokens", type=int)
        parser.add_argument("--hidden", type=int)
        parser.add_argument("--width", type=int)
        parser.add_argument("--window", help="Window H x W of the windowed model, e.g. 2x2")
        parser.add_argument("--no-checkpoint", action="store_true", help="Skip writing the checkpoint")
        parser.add_argument("--progress", action="store_true", default=None, help="Show a progress bar")

    def run(self, options: Dict[str, Any]):
        cli = {key: options.get(key) for key in FLAG_KEYS}
        cli["progress"] = options.get("progress")
        if options.get("full_ranks"):
            cli["rank_source"] = "full"
        if options.get("no_checkpoint"):
            cli["checkpoint"] = False
        if options.get("budget") is not None and options.get("perplexity_target") is not None:
            raise self.usage_error("--budget and --perplexity-target are mutually exclusive")
        section = self.section(**cli)
        section = {**self.section("model"), **section}

        seed = self.resolve_seed(options, section)
        data = {key: value for key, value in section.items() if key not in ("seed", "output_dir")}
        if isinstance(data.get("thresholds"), str):
            data["thresholds"] = parse_list(data["thresholds"], float)
        if isinstance(data.get("window"), str):
            data["window"] = list(parse_dims(data["window"]))
        if isinstance(data.get("activation_ranks"), str):
            data["activation_ranks"] = [list(parse_dims(v)) for v in data["activation_ranks"].split(";") if v.strip()]
        data.setdefault("threads", settings.WASI["THREADS"])
        data.setdefault("progress", settings.WASI["PROGRESS_BARS"])

        serializer = TrainConfigSerializer(data=data)
        serializer.is_valid(raise_exception=True)
        params = dict(serializer.validated_data)
        source = params.pop("data")
        write_checkpoint = params.pop("checkpoint")

        cfg = TrainConfig(seed=seed, **params)
        dataset = load_dataset(source, seed)
        model = build_model(cfg.model_spec(dataset.features, dataset.num_classes))
        record = train(model, dataset, cfg)
        record.config["data"] = source

        output_dir = self.output_dir(options, section)
        json_path, _ = record.export(output_dir)
        if write_checkpoint:
            save_checkpoint(model, output_dir / "checkpoint", extra={"config": record.config})

        final = record.final
        self.stdout.write(self.style.SUCCESS(
            f"Trained {cfg.epochs} epochs in {cfg.mode} mode: "
            f"train accuracy {final.train_accuracy:.4f}, validation accuracy {final.val_accuracy:.4f}; "
            f"record in {json_path}"
        ))
