"""
On-disk artifacts shared by every command: JSON manifests, CSV tables and
raw little-endian float64 blobs.
"""
import csv
import json
import logging
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

BLOB_DTYPE = np.dtype("<f8")
FLOAT_DIGITS = 17

PathLike = Union[str, Path]


def utc_timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def ensure_output_dir(path: PathLike) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ───────────────────────────────────────────────────────────
# JSON
# ───────────────────────────────────────────────────────────

def _format_float(value: float) -> str:
    if not math.isfinite(value):
        return "null"
    text = format(value, f".{FLOAT_DIGITS}g")
    if not any(ch in text for ch in ".en"):
        text += ".0"
    return text


def _plain(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, Path):
        return str(value)
    return value


def dumps_json(obj: Any, indent: int = 2) -> str:
    """JSON text with every float written at 17 significant digits."""

    def encode(value: Any, level: int) -> str:
        value = _plain(value)
        pad = " " * (indent * (level + 1))
        close = " " * (indent * level)
        if isinstance(value, dict):
            if not value:
                return "{}"
            items = [f"{pad}{json.dumps(str(k))}: {encode(v, level + 1)}" for k, v in value.items()]
            return "{\n" + ",\n".join(items) + "\n" + close + "}"
        if isinstance(value, (list, tuple)):
            if not value:
                return "[]"
            if all(isinstance(_plain(v), (int, float)) and not isinstance(v, bool) for v in value):
                return "[" + ", ".join(encode(v, level + 1) for v in value) + "]"
            items = [pad + encode(v, level + 1) for v in value]
            return "[\n" + ",\n".join(items) + "\n" + close + "]"
        if isinstance(value, bool) or value is None:
            return json.dumps(value)
        if isinstance(value, int):
            return str(value)
        if isinstance(value, float):
            return _format_float(value)
        if isinstance(value, str):
            return json.dumps(value)
        raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")

    return encode(obj, 0) + "\n"


def write_json(path: PathLike, obj: Any) -> Path:
    path = Path(path)
    path.write_text(dumps_json(obj), encoding="utf-8")
    logger.debug(f"Wrote {path}")
    return path


def read_json(path: PathLike) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ───────────────────────────────────────────────────────────
# CSV
# ───────────────────────────────────────────────────────────

def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Comma-separated, '.' decimal, '\\n' line ends, mandatory header."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
    logger.debug(f"Wrote {path}")
    return path


# ───────────────────────────────────────────────────────────
# Binary blobs
# ───────────────────────────────────────────────────────────

def write_blob(path: PathLike, array: np.ndarray) -> Path:
    path = Path(path)
    np.ascontiguousarray(array, dtype=BLOB_DTYPE).tofile(path)
    return path


def read_blob(path: PathLike, shape: Optional[Sequence[int]] = None) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Blob not found: {path}")
    data = np.fromfile(path, dtype=BLOB_DTYPE).astype(np.float64)
    if shape is not None:
        expected = int(np.prod(shape))
        if data.size != expected:
            raise ValueError(f"{path} holds {data.size} values, shape {tuple(shape)} needs {expected}")
        data = data.reshape(tuple(shape))
    return data
