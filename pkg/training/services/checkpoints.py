"""
Checkpoints: one manifest.json plus one little-endian float64 blob per array.

    layer<i>.L.bin, layer<i>.R.bin        low-rank weight factors
    layer<i>.W.bin                        dense weight (vanilla / asi-only)
    layer<i>.core.bin, layer<i>.U<m>.bin  last Tucker state of the cached input
    param.<name>.bin                      every other parameter
"""
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from core.utils.artifacts import ensure_output_dir, read_blob, read_json, utc_timestamp, write_blob, write_json
from subspace.services.activation_subspace import tucker_from_factors
from subspace.services.weight_subspace import LowRankWeight
from training.services.layers import SubspaceWeight
from training.services.models import Model, ModelSpec, build_model

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: Model, directory, extra: Optional[Dict[str, Any]] = None) -> Path:
    directory = ensure_output_dir(directory)
    layers = []
    for i, layer in enumerate(model.subspace_layers):
        entry: Dict[str, Any] = {"name": layer.name, "mode": layer.mode, "shape": [layer.out_features, layer.in_features]}
        if layer.low_rank_weight:
            lr = layer.lowrank
            write_blob(directory / f"layer{i}.L.bin", lr.left)
            write_blob(directory / f"layer{i}.R.bin", lr.right)
            entry.update(rank=lr.rank, epsilon=lr.epsilon, iteration=lr.iteration)
        else:
            write_blob(directory / f"layer{i}.W.bin", layer.dense_weight)
        entry["activation_ranks"] = None if layer.activation_ranks is None else list(layer.activation_ranks)
        if layer.tucker is not None:
            write_blob(directory / f"layer{i}.core.bin", layer.tucker.core)
            for m, factor in enumerate(layer.tucker.factors, start=1):
                write_blob(directory / f"layer{i}.U{m}.bin", factor)
            entry["tucker"] = {"shape": list(layer.tucker.shape), "ranks": list(layer.tucker.ranks),
                               "epoch": layer.tucker.epoch}
        layers.append(entry)

    params = {}
    for p in model.parameters():
        if isinstance(p, SubspaceWeight):
            continue
        write_blob(directory / f"param.{p.name}.bin", p.value)
        params[p.name] = list(p.value.shape)

    manifest = {
        "format": FORMAT_VERSION,
        "created_at": utc_timestamp(),
        "seed": model.spec.seed,
        "model": model.spec.to_dict(),
        "layers": layers,
        "params": params,
        **(extra or {}),
    }
    path = write_json(directory / MANIFEST, manifest)
    logger.info(f"Saved checkpoint with {len(layers)} subspace layers to {directory}")
    return path


def load_checkpoint(directory) -> Model:
    directory = Path(directory)
    manifest_path = directory / MANIFEST
    if not manifest_path.is_file():
        raise CheckpointError(f"No {MANIFEST} in {directory}")
    manifest = read_json(manifest_path)
    if manifest.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint format {manifest.get('format')!r}")

    model = build_model(ModelSpec.from_dict(manifest["model"]))
    layers = model.subspace_layers
    if len(layers) != len(manifest["layers"]):
        raise CheckpointError(f"Manifest lists {len(manifest['layers'])} layers, model has {len(layers)}")

    for i, (layer, entry) in enumerate(zip(layers, manifest["layers"])):
        out_features, in_features = entry["shape"]
        if layer.low_rank_weight:
            rank = int(entry["rank"])
            layer.lowrank = LowRankWeight(
                read_blob(directory / f"layer{i}.L.bin", (out_features, rank)),
                read_blob(directory / f"layer{i}.R.bin", (rank, in_features)),
                rank, float(entry["epsilon"]), int(entry["iteration"]),
            )
        else:
            layer.dense_weight = read_blob(directory / f"layer{i}.W.bin", (out_features, in_features))
        layer.weight.invalidate()
        ranks = entry.get("activation_ranks")
        layer.activation_ranks = None if ranks is None else tuple(ranks)
        tucker = entry.get("tucker")
        if tucker:
            core = read_blob(directory / f"layer{i}.core.bin", tucker["ranks"])
            factors = [
                read_blob(directory / f"layer{i}.U{m}.bin", (d, r))
                for m, (d, r) in enumerate(zip(tucker["shape"], tucker["ranks"]), start=1)
            ]
            layer.tucker = tucker_from_factors(core, factors, epoch=int(tucker["epoch"]))

    for p in model.parameters():
        if isinstance(p, SubspaceWeight):
            continue
        if p.name not in manifest["params"]:
            raise CheckpointError(f"Checkpoint has no parameter {p.name}")
        p.value = read_blob(directory / f"param.{p.name}.bin", manifest["params"][p.name])
    return model
