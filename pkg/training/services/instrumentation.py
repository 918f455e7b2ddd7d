"""
Counter snapshots for a model: stored elements and counted multiplies/adds
per SubspaceLinear, plus the dense remainder of the network.
"""
from typing import Any, Dict


def layer_snapshot(layer) -> Dict[str, Any]:
    return {
        "name": layer.name,
        "mode": layer.mode,
        "shape": [layer.out_features, layer.in_features],
        "rank": layer.rank,
        "activation_ranks": None if layer.tucker is None else list(layer.tucker.ranks),
        "weight_elements": layer.weight_elements,
        "activation_elements": layer.activation_elements,
        **layer.counter.snapshot(),
    }


def instrument_counters(model) -> Dict[str, Any]:
    layers = [layer_snapshot(layer) for layer in model.subspace_layers]
    dense = model.dense_counter.snapshot()
    totals = {
        key: sum(entry[key] for entry in layers) + dense[key]
        for key in ("multiplies", "adds", "flops")
    }
    totals["weight_elements"] = sum(entry["weight_elements"] for entry in layers)
    totals["activation_elements"] = sum(entry["activation_elements"] for entry in layers)
    return {"layers": layers, "dense": dense, "totals": totals}


def reset_counters(model) -> None:
    model.reset_counters()
    for layer in model.subspace_layers:
        layer.activation_elements = 0
