"""
Decompose a weight matrix (truncated SVD) or an activation tensor (HOSVD
or warm-started ASI) and write the factors plus a JSON manifest.

Usage:
    python manage.py decompose --matrix w.bin --shape 64x48 --eps 0.9
    python manage.py decompose --tensor a.bin --shape 32x16x64 --ranks 4x4x8 --method asi
    python manage.py decompose --synthetic tensor:shape=8x6x10,ranks=3x3x3 --eps 0.95
"""
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from core.utils.artifacts import read_blob, read_json, utc_timestamp, write_blob, write_json
from core.utils.commands import EngineCommand
from core.utils.parsing import parse_dims, parse_key_values
from subspace.serializers import DecomposeOptionsSerializer
from subspace.services.activation_subspace import (
    asi_step,
    hosvd,
    mode_explained_variance,
    reconstruct_tucker,
)
from tensor_core.services.tensor_ops import as_tensor, explained_variance, truncated_svd

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 0.9


class Command(EngineCommand):
    help = "Truncated SVD of a matrix or Tucker decomposition of an activation tensor"
    config_section_name = "decompose"

    def add_engine_arguments(self, parser):
        parser.add_argument("--matrix", help="Raw little-endian float64 matrix blob")
        parser.add_argument("--tensor", help="Raw little-endian float64 tensor blob (order 3 or 4)")
        parser.add_argument("--synthetic", help="matrix:rows=..,cols=..,rank=..,noise=.. or tensor:shape=..,ranks=..,noise=..")
        parser.add_argument("--shape", help="Input shape such as 64x48; defaults to the sibling .json")
        parser.add_argument("--eps", type=float, help=f"Explained-variance threshold (default {DEFAULT_EPSILON})")
        parser.add_argument("--rank", type=int, help="Fixed matrix rank instead of --eps")
        parser.add_argument("--ranks", help="Fixed tensor mode ranks such as 4x4x8")
        parser.add_argument("--method", choices=("hosvd", "asi"), help="Tensor method (default hosvd)")
        parser.add_argument("--steps", type=int, help="Warm-started ASI steps (default 10)")

    def run(self, options: Dict[str, Any]):
        section = self.section(
            matrix=options.get("matrix"),
            tensor=options.get("tensor"),
            synthetic=options.get("synthetic"),
            shape=options.get("shape"),
            eps=options.get("eps"),
            rank=options.get("rank"),
            ranks=options.get("ranks"),
            method=options.get("method"),
            steps=options.get("steps"),
        )
        sources = [key for key in ("matrix", "tensor", "synthetic") if section.get(key)]
        if len(sources) != 1:
            raise self.usage_error("Give exactly one of --matrix, --tensor or --synthetic")

        if section.get("ranks") is not None:
            section["ranks"] = list(parse_dims(section["ranks"]))
        given = {k: section[k] for k in ("eps", "rank", "ranks", "method", "steps") if section.get(k) is not None}
        serializer = DecomposeOptionsSerializer(data=given)
        serializer.is_valid(raise_exception=True)
        params = serializer.validated_data

        seed = self.resolve_seed(options, section)
        output_dir = self.output_dir(options, section)
        data, source = self._load_input(sources[0], section, seed)

        if data.ndim == 2:
            manifest = self._decompose_matrix(data, params, output_dir)
        else:
            manifest = self._decompose_tensor(data, params, output_dir, seed)

        manifest.update({"source": source, "shape": list(data.shape), "seed": seed, "created_at": utc_timestamp()})
        write_json(output_dir / "manifest.json", manifest)
        self.stdout.write(self.style.SUCCESS(
            f"Decomposed {source} {data.shape}: ranks {manifest['ranks']}, "
            f"relative error {manifest['relative_error']:.3e} -> {output_dir}"
        ))

    # ------------------------------------------------------------------
    # Inputs
    # ------------------------------------------------------------------

    def _load_input(self, kind: str, section: Dict[str, Any], seed: int) -> Tuple[np.ndarray, str]:
        if kind == "synthetic":
            return _synthetic(section["synthetic"], seed), f"synthetic:{section['synthetic']}"

        path = Path(section[kind])
        if not path.is_file():
            raise FileNotFoundError(f"Input file not found: {path}")
        shape = parse_dims(section["shape"]) if section.get("shape") else _sibling_shape(path)
        if shape is None:
            raise self.usage_error(f"No --shape given and no sibling JSON with a shape for {path}")
        data = as_tensor(read_blob(path, shape))
        if kind == "matrix" and data.ndim != 2:
            raise self.usage_error(f"--matrix needs a 2-D shape, got {shape}")
        if kind == "tensor" and data.ndim not in (3, 4):
            raise self.usage_error(f"--tensor needs an order-3 or order-4 shape, got {shape}")
        return data, str(path)

    # ------------------------------------------------------------------
    # Decompositions
    # ------------------------------------------------------------------

    def _decompose_matrix(self, w: np.ndarray, params, output_dir: Path) -> Dict[str, Any]:
        epsilon = params.get("eps")
        if epsilon is None:
            epsilon = DEFAULT_EPSILON
        result = truncated_svd(w, epsilon, rank=params.get("rank"))
        approx = result.left @ result.right
        error = float(np.linalg.norm(w - approx) / np.linalg.norm(w))
        write_blob(output_dir / "L.bin", result.left)
        write_blob(output_dir / "R.bin", result.right)
        logger.info(f"Matrix {w.shape}: rank {result.rank} at epsilon={epsilon}")
        return {
            "kind": "matrix",
            "method": "truncated_svd",
            "epsilon": epsilon,
            "ranks": [result.rank],
            "relative_error": error,
            "relative_squared_error": error ** 2,
            "singular_values": result.singular_values,
            "explained_variance": [explained_variance(result.singular_values)],
            "stored_elements": result.left.size + result.right.size,
            "dense_elements": w.size,
            "files": {"L": "L.bin", "R": "R.bin"},
        }

    def _decompose_tensor(self, a: np.ndarray, params, output_dir: Path, seed: int) -> Dict[str, Any]:
        method = params.get("method", "hosvd")
        epsilon = params.get("eps")
        if method == "asi":
            ta = asi_step(a, params["ranks"], rng=np.random.default_rng(seed))
            for _ in range(params.get("steps", 10) - 1):
                ta = asi_step(a, params["ranks"], prev=ta)
        elif params.get("ranks"):
            ta = hosvd(a, ranks=params["ranks"])
        else:
            epsilon = DEFAULT_EPSILON if epsilon is None else epsilon
            ta = hosvd(a, epsilon=epsilon)

        files = {"core": "core.bin"}
        write_blob(output_dir / "core.bin", ta.core)
        for mode, factor in enumerate(ta.factors, start=1):
            files[f"U{mode}"] = f"U{mode}.bin"
            write_blob(output_dir / f"U{mode}.bin", factor)

        error = float(np.linalg.norm(a - reconstruct_tucker(ta)) / np.linalg.norm(a))
        logger.info(f"Tensor {a.shape}: {method} ranks {ta.ranks}, relative error {error:.3e}")
        return {
            "kind": "tensor",
            "method": method,
            "epsilon": epsilon,
            "ranks": list(ta.ranks),
            "relative_error": error,
            "relative_squared_error": error ** 2,
            "explained_variance": mode_explained_variance(a),
            "stored_elements": ta.stored_elements,
            "dense_elements": a.size,
            "files": files,
        }


def _sibling_shape(path: Path) -> Optional[Tuple[int, ...]]:
    for candidate in (path.with_suffix(".json"), Path(f"{path}.json")):
        if candidate.is_file():
            meta = read_json(candidate)
            if isinstance(meta, dict) and "shape" in meta:
                return parse_dims(meta["shape"])
    return None


def _synthetic(spec: str, seed: int) -> np.ndarray:
    kind, _, body = spec.partition(":") if ":" in spec else ("matrix", "", spec)
    values = parse_key_values(body)
    rng = np.random.default_rng(seed)
    noise = float(values.get("noise", 0.01))

    if kind == "matrix":
        rows, cols = int(values.get("rows", 64)), int(values.get("cols", 48))
        rank = int(values.get("rank", 8))
        clean = rng.standard_normal((rows, rank)) @ rng.standard_normal((rank, cols))
        return clean + noise * rng.standard_normal((rows, cols))

    if kind == "tensor":
        shape = parse_dims(values.get("shape", "8x6x10"))
        ranks = parse_dims(values.get("ranks", "x".join("3" for _ in shape)))
        if len(ranks) != len(shape):
            raise ValueError(f"Synthetic ranks {ranks} do not match shape {shape}")
        factors = [np.linalg.qr(rng.standard_normal((d, r)))[0] for d, r in zip(shape, ranks)]
        t = rng.standard_normal(ranks)
        for mode, factor in enumerate(factors):
            t = np.moveaxis(np.tensordot(factor, t, axes=(1, mode)), 0, mode)
        return t + noise * rng.standard_normal(shape)

    raise ValueError(f"Unknown synthetic kind '{kind}', expected matrix or tensor")
