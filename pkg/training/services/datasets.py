"""
Datasets for the training harness.

Sources:
    synthetic:easy                               2 well separated Gaussian clusters whose
                                                 offset repeats over 4 feature blocks
    synthetic:classes=4,samples=800,features=16,separation=5,tiles=4
    synthetic:lowrank                            2 clusters on a 4-dim subspace of 32 features
    path/to/data.csv                             label first, then features; optional header
    path/to/train-images-idx3-ubyte              IDX images; labels from the matching
                                                 *-labels-idx1-ubyte file
    idx:images=...,labels=...

Every source is shuffled with the seed, split 80/20 into train and
validation, and z-scored with the training statistics.
"""
import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from core.utils.parsing import parse_key_values

logger = logging.getLogger(__name__)

TRAIN_FRACTION = 0.8

SYNTHETIC_PRESETS = {
    "easy": {"classes": 2, "samples": 512, "features": 16, "separation": 8.0, "tiles": 4},
    "blobs": {"classes": 4, "samples": 1024, "features": 16, "separation": 5.0},
    "lowrank": {"classes": 2, "samples": 512, "features": 32, "separation": 8.0, "latent": 4, "noise": 0.05},
}

IDX_DTYPES = {0x08: np.uint8, 0x09: np.int8, 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


class DatasetError(ValueError):
    """Base class for dataset problems."""


class DatasetNotFoundError(DatasetError):
    pass


class MalformedRowError(DatasetError):
    def __init__(self, path, line: int, reason: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}, line {line}: {reason}")


class LabelOutOfRangeError(DatasetError):
    pass


@dataclass
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    num_classes: int
    source: str

    @property
    def features(self) -> int:
        return self.train_x.shape[1]

    def __len__(self) -> int:
        return len(self.train_y)


def load_dataset(source: str, seed: int, num_classes: Optional[int] = None) -> Dataset:
    """Load, shuffle, split and normalize `source`."""
    if source.startswith("synthetic:"):
        x, y = _synthetic(source.split(":", 1)[1], seed)
    elif source.startswith("idx:"):
        values = parse_key_values(source.split(":", 1)[1])
        if "images" not in values or "labels" not in values:
            raise DatasetError("idx: sources need images=... and labels=...")
        x, y = _read_idx_pair(Path(str(values["images"])), Path(str(values["labels"])))
    else:
        path = Path(source)
        if not path.is_file():
            raise DatasetNotFoundError(f"Dataset file not found: {path}")
        if "idx" in path.name:
            x, y = _read_idx_pair(path, _labels_path(path))
        else:
            x, y = _read_csv(path)

    if len(y) < 2:
        raise DatasetError(f"{source} holds {len(y)} samples, need at least 2")
    if np.any(y < 0):
        raise LabelOutOfRangeError(f"{source} has negative labels")
    classes = int(y.max()) + 1 if num_classes is None else int(num_classes)
    if y.max() >= classes:
        raise LabelOutOfRangeError(f"Label {int(y.max())} is outside [0, {classes - 1}] in {source}")

    train_x, train_y, val_x, val_y = split(x, y, seed)
    train_x, val_x = standardize(train_x, val_x)
    logger.info(f"Loaded {source}: {len(train_y)} train / {len(val_y)} validation, "
                f"{x.shape[1]} features, {classes} classes")
    return Dataset(train_x, train_y, val_x, val_y, classes, source)


def split(x: np.ndarray, y: np.ndarray, seed: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    order = np.random.default_rng(seed).permutation(len(y))
    cut = max(1, min(len(y) - 1, int(round(TRAIN_FRACTION * len(y)))))
    train, val = order[:cut], order[cut:]
    return x[train], y[train], x[val], y[val]


def standardize(train_x: np.ndarray, val_x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mean = train_x.mean(axis=0)
    std = train_x.std(axis=0)
    std[std == 0.0] = 1.0
    return (train_x - mean) / std, (val_x - mean) / std


# ───────────────────────────────────────────────────────────
# Sources
# ───────────────────────────────────────────────────────────

def _synthetic(spec: str, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    if spec in SYNTHETIC_PRESETS:
        params = dict(SYNTHETIC_PRESETS[spec])
    else:
        params = {k: v for k, v in SYNTHETIC_PRESETS["easy"].items() if k != "tiles"}
        params.update(parse_key_values(spec))
    classes, samples = int(params["classes"]), int(params["samples"])
    features, separation = int(params["features"]), float(params["separation"])
    latent = int(params.get("latent", features))
    noise = float(params.get("noise", 0.0))
    tiles = int(params.get("tiles", 1))
    if classes < 2 or samples < classes or features < 1 or separation < 0 or not 1 <= latent <= features or noise < 0:
        raise DatasetError(f"Invalid synthetic spec '{spec}'")
    if tiles < 1 or latent % tiles:
        raise DatasetError(f"Invalid synthetic spec '{spec}': {latent} dimensions do not split into {tiles} tiles")

    rng = np.random.default_rng(seed)
    # class offsets repeat over `tiles` equal feature blocks
    directions = np.tile(rng.standard_normal((classes, latent // tiles)), tiles)
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    if classes == 2:
        directions[1] = -directions[0]
    centers = 0.5 * separation * directions
    y = np.arange(samples) % classes
    x = centers[y] + rng.standard_normal((samples, latent))
    if latent < features:
        # clusters live on a random latent-dimensional subspace
        mixing = rng.standard_normal((latent, features)) / np.sqrt(latent)
        x = x @ mixing + noise * rng.standard_normal((samples, features))
    return x, y.astype(np.int64)


def _read_csv(path: Path) -> Tuple[np.ndarray, np.ndarray]:
    rows, labels = [], []
    width = None
    with path.open(newline="", encoding="utf-8") as handle:
        for line, row in enumerate(csv.reader(handle), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if line == 1 and not _is_number(row[0]):
                continue  # header
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                raise MalformedRowError(path, line, "non-numeric value")
            if not np.all(np.isfinite(values)):
                raise MalformedRowError(path, line, "non-finite value")
            if len(values) < 2:
                raise MalformedRowError(path, line, "needs a label and at least one feature")
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise MalformedRowError(path, line, f"has {len(values)} columns, expected {width}")
            if not values[0].is_integer():
                raise MalformedRowError(path, line, f"label {values[0]} is not an integer")
            labels.append(int(values[0]))
            rows.append(values[1:])
    if not rows:
        raise DatasetError(f"{path} contains no data rows")
    return np.asarray(rows, dtype=np.float64), np.asarray(labels, dtype=np.int64)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def _labels_path(images: Path) -> Path:
    candidate = images.with_name(images.name.replace("images", "labels").replace("idx3", "idx1"))
    if candidate == images or not candidate.is_file():
        raise DatasetNotFoundError(f"No labels file next to {images} (expected {candidate.name})")
    return candidate


def read_idx(path: Path) -> np.ndarray:
    """Array from an IDX file: zero bytes, dtype code, rank, big-endian extents, data."""
    if not path.is_file():
        raise DatasetNotFoundError(f"Dataset file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0 or raw[2] not in IDX_DTYPES:
        raise DatasetError(f"{path} is not an IDX file")
    ndim = raw[3]
    header = 4 + 4 * ndim
    shape = tuple(int(v) for v in np.frombuffer(raw[4:header], dtype=">u4"))
    dtype = np.dtype(IDX_DTYPES[raw[2]])
    count = int(np.prod(shape)) if shape else 0
    if len(raw) != header + count * dtype.itemsize:
        raise DatasetError(f"{path}: size does not match its header {shape}")
    return np.frombuffer(raw[header:], dtype=dtype).reshape(shape)


def _read_idx_pair(images: Path, labels: Path) -> Tuple[np.ndarray, np.ndarray]:
    x = read_idx(images)
    y = read_idx(labels)
    if y.ndim != 1 or len(y) != len(x):
        raise DatasetError(f"{labels} holds {y.shape} labels for {len(x)} images")
    return x.reshape(len(x), -1).astype(np.float64), y.astype(np.int64)
