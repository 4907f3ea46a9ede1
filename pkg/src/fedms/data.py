"""Datasets, IDX ingestion and Maverick-aware client partitioning."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxError(ValueError):
    """Base class for malformed IDX input."""


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ValueError(f"features {x.shape} and labels {y.shape} do not line up")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain NaN or Inf")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(sorted(indices), dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.num_classes)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class ClientPartition:
    assignments: dict[int, frozenset[int]]
    maverick_classes: dict[int, frozenset[int]] = field(default_factory=dict)

    @property
    def num_clients(self) -> int:
        return len(self.assignments)

    @property
    def mavericks(self) -> list[int]:
        return sorted(i for i, cs in self.maverick_classes.items() if cs)

    def sizes(self) -> np.ndarray:
        return np.array([len(self.assignments[i]) for i in range(self.num_clients)])

    def client_data(self, dataset: LabeledDataset, client_id: int) -> LabeledDataset:
        return dataset.subset(self.assignments[client_id])


# --- IDX --------------------------------------------------------------------


def _read_header(buf: bytes, expected_magic: int, ndim: int, what: str) -> tuple[int, ...]:
    if len(buf) < 4:
        raise IdxTruncatedError(f"{what}: file shorter than the magic number")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != expected_magic:
        raise IdxMagicError(f"{what}: magic 0x{magic:08X}, expected 0x{expected_magic:08X}")
    end = 4 + 4 * ndim
    if len(buf) < end:
        raise IdxTruncatedError(f"{what}: header truncated")
    return struct.unpack(f">{ndim}I", buf[4:end])


def parse_idx_images(buf: bytes) -> np.ndarray:
    count, rows, cols = _read_header(buf, IMAGES_MAGIC, 3, "images")
    need = count * rows * cols
    payload = buf[16 : 16 + need]
    if len(payload) < need:
        raise IdxTruncatedError(f"images: expected {need} payload bytes, found {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows * cols)
    return pixels.astype(np.float64) / 255.0


def parse_idx_labels(buf: bytes) -> np.ndarray:
    (count,) = _read_header(buf, LABELS_MAGIC, 1, "labels")
    payload = buf[8 : 8 + count]
    if len(payload) < count:
        raise IdxTruncatedError(f"labels: expected {count} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def load_idx(images_path, labels_path, num_classes: int = 10) -> LabeledDataset:
    images = parse_idx_images(Path(images_path).read_bytes())
    labels = parse_idx_labels(Path(labels_path).read_bytes())
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            f"{images.shape[0]} images but {labels.shape[0]} labels"
        )
    return LabeledDataset(images, labels, num_classes)


def idx_bytes(dataset: LabeledDataset, shape: tuple[int, int]) -> tuple[bytes, bytes]:
    """Encode a dataset with features in [0, 1] back to (images, labels) IDX bytes."""
    rows, cols = shape
    if rows * cols != dataset.dim:
        raise ValueError("image shape does not match feature dimension")
    pixels = np.rint(dataset.features * 255.0).astype(np.uint8)
    n = len(dataset)
    images = struct.pack(">4I", IMAGES_MAGIC, n, rows, cols) + pixels.tobytes()
    labels = struct.pack(">2I", LABELS_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    return images, labels


# --- synthetic data ---------------------------------------------------------


def synth_blobs(
    num_classes: int, per_class: int, dim: int, spread: float, seed: int
) -> LabeledDataset:
    """Isotropic Gaussian blobs around random points on a radius-3 sphere."""
    if num_classes < 1 or per_class < 1 or dim < 1:
        raise ValueError("num_classes, per_class and dim must be positive")
    if not spread > 0:
        raise ValueError("spread must be positive")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((num_classes, dim))
    centers *= 3.0 / np.linalg.norm(centers, axis=1, keepdims=True)
    labels = np.repeat(np.arange(num_classes), per_class)
    noise = rng.standard_normal((num_classes * per_class, dim))
    return LabeledDataset(centers[labels] + spread * noise, labels, num_classes)


def stratified_split(
    dataset: LabeledDataset, fraction: float, seed: int
) -> tuple[LabeledDataset, LabeledDataset]:
    """Split off ``fraction`` of every class (at least one sample each).

    Returns ``(carved, rest)``.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    carved = []
    for c in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == c)
        if idx.size < 2:
            raise ValueError(f"class {c} has {idx.size} samples; need >= 2 to split")
        k = min(max(1, int(round(fraction * idx.size))), idx.size - 1)
        carved.extend(rng.permutation(idx)[:k].tolist())
    carved_set = set(carved)
    rest = [i for i in range(len(dataset)) if i not in carved_set]
    return dataset.subset(carved), dataset.subset(rest)


# --- partitioning -----------------------------------------------------------


def maverick_partition(
    dataset: LabeledDataset,
    num_clients: int,
    maverick_spec: Mapping[int, set[int] | frozenset[int]],
    seed: int,
) -> ClientPartition:
    """Give each rare class only to its declared Mavericks; deal every other
    class round-robin across all clients after a seeded shuffle."""
    if num_clients < 1:
        raise ValueError("need at least one client")
    for c, owners in maverick_spec.items():
        if not owners:
            raise ValueError(f"rare class {c} has no owning client")
        bad = [i for i in owners if not 0 <= i < num_clients]
        if bad:
            raise ValueError(f"client id(s) {bad} out of range for {num_clients} clients")
        if not 0 <= c < dataset.num_classes:
            raise ValueError(f"rare class {c} outside [0, {dataset.num_classes})")
    rng = np.random.default_rng(seed)
    buckets: list[list[int]] = [[] for _ in range(num_clients)]
    everyone = list(range(num_clients))
    for c in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == c)
        owners = sorted(maverick_spec[c]) if c in maverick_spec else everyone
        if c in maverick_spec and idx.size == 0:
            raise ValueError(f"rare class {c} has no samples")
        for k, sample in enumerate(rng.permutation(idx)):
            buckets[owners[k % len(owners)]].append(int(sample))
    mav: dict[int, set[int]] = {i: set() for i in range(num_clients)}
    for c, owners in maverick_spec.items():
        for i in owners:
            mav[i].add(c)
    return ClientPartition(
        assignments={i: frozenset(b) for i, b in enumerate(buckets)},
        maverick_classes={i: frozenset(cs) for i, cs in mav.items()},
    )


def label_distribution(
    partition: ClientPartition, dataset: LabeledDataset, client_id: int
) -> np.ndarray:
    idx = np.fromiter(partition.assignments[client_id], dtype=np.int64)
    if idx.size == 0:
        raise ValueError(f"client {client_id} owns no samples")
    counts = np.bincount(dataset.labels[idx], minlength=dataset.num_classes)
    return counts / counts.sum()


def emd_discrete(p, q, ground: str = "categorical") -> float:
    """Earth mover's distance between two label distributions.

    ``categorical`` uses the 0/1 ground metric (so the distance is total
    variation); ``ordinal`` treats labels as points on a line, unit spacing.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distributions differ in length")
    for name, v in (("p", p), ("q", q)):
        if abs(v.sum() - 1.0) > 1e-6 or (v < 0).any():
            raise ValueError(f"{name} is not a probability vector")
    if ground == "categorical":
        return 0.5 * float(np.abs(p - q).sum())
    if ground == "ordinal":
        return float(np.abs(np.cumsum(p - q)).sum())
    raise ValueError(f"unknown ground metric {ground!r}")
