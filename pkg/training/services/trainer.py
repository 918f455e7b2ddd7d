"""
Training loop of the harness.

One step, per SubspaceLinear:
    forward (low-rank product, input compressed to Tucker form by ASI)
    backward (input gradient through L and R, weight gradient from the Tucker
    factors), global L2 clipping, weight decay on L.R, cosine learning rate,
    apply_update and one WSI step.

Activation ranks are fixed before the first step from a held-out batch
(the first `batch_size` training samples), by one of the rank sources:
    epsilon      HOSVD ranks at the weight threshold
    full         every mode at its bound
    ranks        explicit per-layer ranks
    budget       rank-select under a memory budget
    perplexity   rank-select under a perplexity target
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from core.utils.artifacts import utc_timestamp, write_csv, write_json
from rank_select.services.perplexity import perplexity_scan
from rank_select.services.selection import (
    PerplexityTable,
    RankPlan,
    select_budget,
    select_perplexity_target,
)
from subspace.services.activation_subspace import check_ranks
from training.services.datasets import Dataset, DatasetError
from training.services.instrumentation import instrument_counters
from training.services.layers import MODES, WARM_START_SCOPES
from training.services.models import Model, ModelSpec
from training.services.optim import SCHEDULES, SGD

logger = logging.getLogger(__name__)

RANK_SOURCES = ("epsilon", "full", "ranks", "budget", "perplexity")
DEFAULT_THRESHOLDS = (0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)

EPOCH_COLUMNS = [
    "epoch", "loss", "train_accuracy", "val_accuracy", "learning_rate",
    "ranks", "flops", "weight_elements", "activation_elements",
]


class NonFiniteLossError(ArithmeticError):
    def __init__(self, epoch: int, step: int, loss: float):
        self.epoch = epoch
        self.step = step
        self.loss = loss
        super().__init__(f"Non-finite loss {loss} at epoch {epoch}, step {step}")


@dataclass
class TrainConfig:
    """
    One training run. Training refreshes R after every WSI step
    (`wsi_variant="refresh"`), while `wsi_step` on its own defaults to
    "verbatim".
    """

    model: str = "mlp"
    mode: str = "wasi"
    epsilon: float = 0.9
    rank: Optional[int] = None
    rank_source: str = "epsilon"
    activation_ranks: Optional[List[List[int]]] = None
    budget: Optional[int] = None
    perplexity_target: Optional[float] = None
    thresholds: List[float] = field(default_factory=lambda: list(DEFAULT_THRESHOLDS))
    lr: float = 0.05
    momentum: float = 0.0
    weight_decay: float = 1e-4
    clip_norm: float = 2.0
    epochs: int = 50
    batch_size: int = 128
    schedule: str = "cosine"
    warmup_steps: int = 0
    min_lr: float = 0.0
    seed: int = 233
    threads: int = 1
    wsi_variant: str = "refresh"
    update_sign: str = "descent"
    warm_start_scope: str = "iteration"
    compress_batch_mode: bool = True
    tokens: int = 4
    hidden: int = 32
    width: int = 16
    window: List[int] = field(default_factory=lambda: [2, 2])
    progress: bool = False

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be positive, got {self.epochs}")
        if self.mode not in MODES:
            raise ValueError(f"Unknown mode '{self.mode}', expected one of {MODES}")
        if self.rank_source not in RANK_SOURCES:
            raise ValueError(f"Unknown rank source '{self.rank_source}', expected one of {RANK_SOURCES}")
        if self.rank_source == "ranks" and not self.activation_ranks:
            raise ValueError("rank_source 'ranks' needs activation_ranks")
        if self.rank_source == "budget" and self.budget is None:
            raise ValueError("rank_source 'budget' needs a budget")
        if self.rank_source == "perplexity" and self.perplexity_target is None:
            raise ValueError("rank_source 'perplexity' needs a perplexity_target")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"Unknown schedule '{self.schedule}', expected one of {SCHEDULES}")
        if self.warm_start_scope not in WARM_START_SCOPES:
            raise ValueError(f"Unknown warm start scope '{self.warm_start_scope}'")
        if not 1 <= self.threads <= self.batch_size:
            raise ValueError(f"threads must lie in [1, batch_size], got {self.threads}")

    def model_spec(self, features: int, classes: int) -> ModelSpec:
        return ModelSpec(
            kind=self.model,
            features=features,
            classes=classes,
            tokens=self.tokens,
            hidden=self.hidden,
            width=self.width,
            window=tuple(self.window),
            mode=self.mode,
            epsilon=self.epsilon,
            rank=self.rank,
            wsi_variant=self.wsi_variant,
            update_sign=self.update_sign,
            warm_start_scope=self.warm_start_scope,
            compress_batch_mode=self.compress_batch_mode,
            seed=self.seed,
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_accuracy: float
    val_accuracy: float
    learning_rate: float
    ranks: Dict[str, int]
    flops: int
    weight_elements: int
    activation_elements: int

    def to_row(self) -> List[Any]:
        ranks = ";".join(f"{name}={k}" for name, k in self.ranks.items())
        return [self.epoch, self.loss, self.train_accuracy, self.val_accuracy, self.learning_rate,
                ranks, self.flops, self.weight_elements, self.activation_elements]


@dataclass
class RunRecord:
    config: Dict[str, Any]
    seed: int
    activation_ranks: Dict[str, Optional[List[int]]] = field(default_factory=dict)
    epochs: List[EpochRecord] = field(default_factory=list)
    step_losses: List[float] = field(default_factory=list)
    counters: Dict[str, Any] = field(default_factory=dict)
    plan: Optional[Dict[str, Any]] = None
    created_at: str = field(default_factory=utc_timestamp)

    @property
    def final(self) -> EpochRecord:
        return self.epochs[-1]

    def rank_trajectory(self, layer: str) -> List[int]:
        return [e.ranks[layer] for e in self.epochs]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "created_at": self.created_at,
            "seed": self.seed,
            "config": self.config,
            "activation_ranks": self.activation_ranks,
            "plan": self.plan,
            "epochs": [asdict(e) for e in self.epochs],
            "step_losses": self.step_losses,
            "counters": self.counters,
        }

    def export(self, directory) -> Tuple[Any, Any]:
        json_path = write_json(directory / "run.json", self.to_dict())
        csv_path = write_csv(directory / "run.csv", EPOCH_COLUMNS, (e.to_row() for e in self.epochs))
        return json_path, csv_path


# ───────────────────────────────────────────────────────────
# Data parallelism
# ───────────────────────────────────────────────────────────

class DataParallel:
    """
    Splits each batch into fixed shards, one model replica per shard.

    Replicas read the master weights, keep their own ASI state and counters,
    and their gradients are reduced into the master in shard order.
    """

    def __init__(self, model: Model, shards: int):
        self.model = model
        self.replicas = [model.replicate() for _ in range(shards)]
        self.pool = ThreadPoolExecutor(max_workers=shards, thread_name_prefix="wasi-shard")

    def loss_and_grad(self, x: np.ndarray, y: np.ndarray) -> float:
        parts = np.array_split(np.arange(len(y)), len(self.replicas))
        futures = [self.pool.submit(r.loss_and_grad, x[p], y[p]) for r, p in zip(self.replicas, parts)]
        losses = [f.result() for f in futures]
        weights = [len(p) / len(y) for p in parts]

        for i, param in enumerate(self.model.parameters()):
            grad = None
            for w, replica in zip(weights, self.replicas):
                shard_grad = w * replica.parameters()[i].grad
                grad = shard_grad if grad is None else grad + shard_grad
            param.grad = grad

        for replica in self.replicas:
            self.model.dense_counter.merge(replica.dense_counter)
            replica.dense_counter.reset()
        for j, layer in enumerate(self.model.subspace_layers):
            shards = [replica.subspace_layers[j] for replica in self.replicas]
            layer.activation_elements = sum(s.activation_elements for s in shards)
            for shard in shards:
                layer.counter.merge(shard.counter)
                shard.counter.reset()

        return math.fsum(w * loss for w, loss in zip(weights, losses))

    def sync(self) -> None:
        for replica in self.replicas:
            replica.share_weights_from(self.model)

    def start_epoch(self) -> None:
        for replica in self.replicas:
            replica.start_epoch()

    def close(self) -> None:
        self.pool.shutdown(wait=True)


# ───────────────────────────────────────────────────────────
# Rank resolution
# ───────────────────────────────────────────────────────────

def heldout_batch(data: Dataset, batch_size: int) -> Tuple[np.ndarray, np.ndarray]:
    """The batch activation ranks are planned on: the first `batch_size` training samples."""
    return data.train_x[:batch_size], data.train_y[:batch_size]


def resolve_activation_ranks(
    model: Model, data: Dataset, cfg: TrainConfig
) -> Tuple[Optional[PerplexityTable], Optional[RankPlan]]:
    """Set `activation_ranks` on every compressing layer; returns the scan and plan if any."""
    layers = [layer for layer in model.subspace_layers if layer.compress_activation]
    if not layers:
        return None, None

    heldout_x, heldout_y = heldout_batch(data, cfg.batch_size)
    table, plan = None, None

    if cfg.rank_source == "full":
        ranks: Sequence[Optional[Tuple[int, ...]]] = [None] * len(layers)
    elif cfg.rank_source == "ranks":
        if len(cfg.activation_ranks) != len(layers):
            raise ValueError(f"Got {len(cfg.activation_ranks)} activation rank vectors for {len(layers)} layers")
        ranks = [tuple(int(r) for r in vector) for vector in cfg.activation_ranks]
    elif cfg.rank_source == "epsilon":
        table = perplexity_scan(model, heldout_x, heldout_y, [cfg.epsilon])
        ranks = [tuple(int(r) for r in table.ranks[i, 0]) for i in range(len(layers))]
    else:
        table = perplexity_scan(model, heldout_x, heldout_y, cfg.thresholds)
        if cfg.rank_source == "budget":
            plan = select_budget(table, cfg.budget)
        else:
            plan = select_perplexity_target(table, cfg.perplexity_target)
        ranks = [tuple(r) for r in plan.ranks]

    if cfg.rank_source == "ranks":
        model.predict(heldout_x)
    for layer, vector in zip(layers, ranks):
        if vector is not None:
            check_ranks(layer.input_shape, vector)
        layer.activation_ranks = vector
    logger.info(f"Activation ranks ({cfg.rank_source}): "
                + ", ".join(f"{layer.name}={layer.activation_ranks or 'full'}" for layer in layers))
    return table, plan


# ───────────────────────────────────────────────────────────
# Training
# ───────────────────────────────────────────────────────────

def _layer_ranks(model: Model) -> Dict[str, int]:
    return {layer.name: layer.rank for layer in model.subspace_layers}


def evaluate(model: Model, data: Dataset) -> Tuple[float, float]:
    return model.accuracy(data.train_x, data.train_y), model.accuracy(data.val_x, data.val_y)


def train(model: Model, data: Dataset, cfg: TrainConfig) -> RunRecord:
    if len(data) == 0:
        raise DatasetError("Training split is empty")
    steps_per_epoch = len(data) // cfg.batch_size
    if steps_per_epoch == 0:
        raise DatasetError(f"Batch size {cfg.batch_size} exceeds the {len(data)} training samples")

    optimizer = SGD(
        lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm,
        schedule=cfg.schedule, warmup_steps=cfg.warmup_steps, min_lr=cfg.min_lr,
        total_steps=steps_per_epoch * cfg.epochs,
    )
    table, plan = resolve_activation_ranks(model, data, cfg)
    model.reset_counters()

    record = RunRecord(config=cfg.to_dict(), seed=cfg.seed)
    record.activation_ranks = {
        layer.name: None if layer.activation_ranks is None else list(layer.activation_ranks)
        for layer in model.subspace_layers
    }
    if plan is not None:
        record.plan = {"table": table.to_dict(), "plan": plan.to_dict()}

    parallel = DataParallel(model, cfg.threads) if cfg.threads > 1 else None
    rng = np.random.default_rng(cfg.seed)
    epochs = range(cfg.epochs)
    if cfg.progress:
        epochs = tqdm(epochs, desc=f"train[{cfg.mode}]", unit="epoch")

    step = 0
    try:
        for epoch in epochs:
            model.start_epoch()
            if parallel:
                parallel.start_epoch()
            order = rng.permutation(len(data))
            losses = []
            lr = optimizer.learning_rate(step)
            for b in range(steps_per_epoch):
                idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                x, y = data.train_x[idx], data.train_y[idx]
                loss = parallel.loss_and_grad(x, y) if parallel else model.loss_and_grad(x, y)
                if not math.isfinite(loss):
                    raise NonFiniteLossError(epoch, step, loss)
                lr = optimizer.step(model.parameters(), step)["lr"]
                if parallel:
                    parallel.sync()
                losses.append(loss)
                record.step_losses.append(loss)
                step += 1

            train_acc, val_acc = evaluate(model, data)
            snapshot = instrument_counters(model)
            entry = EpochRecord(
                epoch=epoch,
                loss=math.fsum(losses) / len(losses),
                train_accuracy=train_acc,
                val_accuracy=val_acc,
                learning_rate=lr,
                ranks=_layer_ranks(model),
                flops=snapshot["totals"]["flops"],
                weight_elements=snapshot["totals"]["weight_elements"],
                activation_elements=snapshot["totals"]["activation_elements"],
            )
            record.epochs.append(entry)
            logger.info(
                f"epoch {epoch}: loss={entry.loss:.4f} train_acc={train_acc:.3f} val_acc={val_acc:.3f} "
                f"ranks={entry.ranks} flops={entry.flops}"
            )
    finally:
        if parallel:
            parallel.close()

    record.counters = instrument_counters(model)
    return record
