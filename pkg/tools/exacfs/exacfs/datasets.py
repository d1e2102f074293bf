"""Desk-scale datasets: synthetic generators and small file formats.

Every dataset is held as float64 arrays shaped (n, c, h, w); vector data uses
(n, dims, 1, 1) so it flows through 1x1 conv stages.
"""

import csv
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .config import DatasetConfig
from .errors import ContractError, FormatError

logger = logging.getLogger(__name__)

EXDS_MAGIC = b"EXDS"
TRAIN_FRACTION = 0.8


@dataclass(frozen=True)
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    num_classes: int

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return tuple(self.train_x.shape[1:])


def split_train_test(x: np.ndarray, y: np.ndarray, seed: int) -> Tuple[np.ndarray, ...]:
    """Seeded per-class 80/20 split; samples keep class-major order."""
    rng = np.random.default_rng([seed, 7])
    train, test = [], []
    for cls in np.unique(y):
        members = np.flatnonzero(y == cls)
        members = members[rng.permutation(members.size)]
        cut = int(TRAIN_FRACTION * members.size)
        train.append(np.sort(members[:cut]))
        test.append(np.sort(members[cut:]))
    train_idx, test_idx = np.concatenate(train), np.concatenate(test)
    return x[train_idx], y[train_idx], x[test_idx], y[test_idx]


def _class_directions(rng: np.random.Generator, classes: int, dims: int) -> np.ndarray:
    """Orthonormal directions when dims allow it, random unit directions otherwise."""
    if dims >= classes:
        q, _ = np.linalg.qr(rng.normal(size=(dims, classes)))
        return q.T
    directions = rng.normal(size=(classes, dims))
    return directions / np.linalg.norm(directions, axis=1, keepdims=True)


def generate_blobs(
    classes: int, dims: int, samples_per_class: int, separation: float, noise: float, seed: int
) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([seed, 101])
    means = separation * _class_directions(rng, classes, dims)
    x = np.concatenate(
        [means[c] + noise * rng.normal(size=(samples_per_class, dims)) for c in range(classes)]
    )
    y = np.repeat(np.arange(classes), samples_per_class)
    return x.reshape(-1, dims, 1, 1), y


def generate_patches(
    classes: int,
    shape: Tuple[int, int, int],
    samples_per_class: int,
    separation: float,
    noise: float,
    seed: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """Oriented gratings: each class has its own orientation and frequency."""
    rng = np.random.default_rng([seed, 202])
    channels, h, w = shape
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    samples = []
    for c in range(classes):
        angle = np.pi * c / classes
        frequency = 1.0 + (c % 3)
        phase = rng.uniform(0, 2 * np.pi)
        pattern = np.cos(
            2 * np.pi * frequency * (xx * np.cos(angle) + yy * np.sin(angle)) / max(h, w) + phase
        )
        template = np.broadcast_to(pattern, (channels, h, w))
        samples.append(separation * template + noise * rng.normal(size=(samples_per_class, channels, h, w)))
    return np.concatenate(samples), np.repeat(np.arange(classes), samples_per_class)


def generate_synthetic(
    kind: str,
    classes: int,
    samples_per_class: int,
    separation: float,
    noise: float,
    seed: int,
    dims: Optional[int] = None,
    shape: Optional[Tuple[int, int, int]] = None,
) -> Dataset:
    """Generate a blobs or patches dataset and split it 80/20."""
    if classes < 2:
        raise ContractError(f"need at least 2 classes, got {classes}")
    if samples_per_class < 5:
        raise ContractError(f"need at least 5 samples per class, got {samples_per_class}")
    if kind == "blobs":
        x, y = generate_blobs(classes, dims or 16, samples_per_class, separation, noise, seed)
    elif kind == "patches":
        x, y = generate_patches(classes, shape or (1, 8, 8), samples_per_class, separation, noise, seed)
    else:
        raise ContractError(f"unknown synthetic dataset kind '{kind}'")
    return Dataset(*split_train_test(x, y, seed), num_classes=classes)


def _relabel(labels: np.ndarray) -> Tuple[np.ndarray, int]:
    classes, relabeled = np.unique(labels, return_inverse=True)
    return relabeled.astype(np.int64), classes.size


def load_csv_dataset(path: Union[str, Path], seed: int) -> Dataset:
    """Rows `label,feat_0,...,feat_{D-1}`; an optional header row starting with `label` is skipped."""
    path = Path(path)
    labels, rows = [], []
    with open(path, newline="") as handle:
        for line_no, row in enumerate(csv.reader(handle), start=1):
            if not row or (line_no == 1 and row[0].strip() == "label"):
                continue
            try:
                labels.append(int(row[0]))
                rows.append([float(v) for v in row[1:]])
            except ValueError as e:
                raise FormatError(str(path), f"not numeric: {e}", line_no) from e
            if len(rows[-1]) != len(rows[0]) or not rows[0]:
                raise FormatError(str(path), "inconsistent feature count", line_no)
    if not rows:
        raise FormatError(str(path), "no samples")
    x = np.asarray(rows, dtype=np.float64)
    y, classes = _relabel(np.asarray(labels))
    return Dataset(*split_train_test(x.reshape(len(x), -1, 1, 1), y, seed), num_classes=classes)


def write_csv_dataset(path: Union[str, Path], x: np.ndarray, y: np.ndarray) -> None:
    flat = np.asarray(x).reshape(len(x), -1)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["label"] + [f"feat_{i}" for i in range(flat.shape[1])])
        for label, features in zip(y, flat):
            writer.writerow([int(label)] + [repr(float(v)) for v in features])


def _record_dtype(values: int) -> np.dtype:
    return np.dtype([("label", "<u4"), ("values", "<f4", (values,))])


def load_binary_dataset(path: Union[str, Path], seed: int) -> Dataset:
    """EXDS container: magic, u32 count, u32 c, h, w, then per sample u32 label + float32 values."""
    path = Path(path)
    payload = path.read_bytes()
    if payload[:4] != EXDS_MAGIC:
        raise FormatError(str(path), f"bad magic {payload[:4]!r}, expected {EXDS_MAGIC!r}")
    try:
        count, c, h, w = struct.unpack_from("<4I", payload, 4)
    except struct.error as e:
        raise FormatError(str(path), "truncated header") from e
    dtype = _record_dtype(c * h * w)
    if len(payload) != 20 + count * dtype.itemsize:
        raise FormatError(str(path), f"expected {count} records of {dtype.itemsize} bytes")
    records = np.frombuffer(payload, dtype=dtype, count=count, offset=20)
    x = records["values"].astype(np.float64).reshape(count, c, h, w)
    y, classes = _relabel(records["label"].astype(np.int64))
    return Dataset(*split_train_test(x, y, seed), num_classes=classes)


def write_binary_dataset(path: Union[str, Path], x: np.ndarray, y: np.ndarray) -> None:
    x = np.asarray(x)
    count, c, h, w = x.shape
    records = np.zeros(count, dtype=_record_dtype(c * h * w))
    records["label"] = y
    records["values"] = x.reshape(count, -1)
    Path(path).write_bytes(EXDS_MAGIC + struct.pack("<4I", count, c, h, w) + records.tobytes())


def load_dataset(cfg: DatasetConfig, seed: int) -> Dataset:
    """Build the dataset a run config describes."""
    if cfg.kind == "csv":
        dataset = load_csv_dataset(cfg.path, seed)
    elif cfg.kind == "binary":
        dataset = load_binary_dataset(cfg.path, seed)
    else:
        dataset = generate_synthetic(
            cfg.kind,
            cfg.classes,
            cfg.samples_per_class,
            cfg.separation,
            cfg.noise,
            seed,
            dims=cfg.dims,
            shape=cfg.shape,
        )
    if dataset.num_classes != cfg.classes:
        raise ContractError(f"dataset has {dataset.num_classes} classes, config declares {cfg.classes}")
    logger.debug(
        "dataset %s: %d train / %d test samples, input %s",
        cfg.kind,
        len(dataset.train_y),
        len(dataset.test_y),
        dataset.input_shape,
    )
    return dataset
