"""Datasets, IDX ingestion, synthetic blobs and client partitioning."""
from __future__ import annotations

import gzip
import logging
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import BinaryIO, Iterator, List, Optional, Sequence, Tuple

import numpy as np

LOGGER = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """An IDX file could not be decoded."""


class BadMagicError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


class TruncatedPayloadError(IdxFormatError):
    pass


def _frozen(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class Sample:
    """A single feature vector with its class label."""

    features: np.ndarray
    label: int


@dataclass(frozen=True)
class Dataset:
    """Ordered, immutable collection of samples sharing one dimension.

    Attributes:
        features: ``(n, d)`` float matrix, row ``i`` is sample ``i``.
        labels: ``(n,)`` integer class ids in ``[0, num_classes)``.
        num_classes: Class count ``K``.
        image_shape: ``(rows, cols)`` with ``rows * cols == d``. Synthetic
            data uses ``(1, d)``.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    image_shape: Tuple[int, int]

    def __post_init__(self) -> None:
        features = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {features.shape}")
        if features.shape[0] != labels.shape[0]:
            raise ValueError(
                f"{features.shape[0]} feature rows but {labels.shape[0]} labels"
            )
        rows, cols = self.image_shape
        if rows * cols != features.shape[1]:
            raise ValueError(f"image_shape {self.image_shape} does not match dim {features.shape[1]}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "features", _frozen(features))
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "image_shape", (int(rows), int(cols)))

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def __getitem__(self, index: int) -> Sample:
        return Sample(features=self.features[index], label=int(self.labels[index]))

    def __iter__(self) -> Iterator[Sample]:
        for index in range(len(self)):
            yield self[index]

    def subset(self, indices: Sequence[int] | np.ndarray) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            features=self.features[idx],
            labels=self.labels[idx],
            num_classes=self.num_classes,
            image_shape=self.image_shape,
        )

    def head(self, n: Optional[int]) -> "Dataset":
        if n is None or n >= len(self):
            return self
        return self.subset(np.arange(n))

    def replace(self, features: Optional[np.ndarray] = None, labels: Optional[np.ndarray] = None) -> "Dataset":
        return Dataset(
            features=self.features if features is None else features,
            labels=self.labels if labels is None else labels,
            num_classes=self.num_classes,
            image_shape=self.image_shape,
        )


@dataclass(frozen=True)
class ClientDataset:
    """A client's private shard plus ground-truth poison bookkeeping.

    ``poison_flags`` is never read by the defense; it only feeds metrics.
    ``source_indices`` maps each row back to the pooled dataset.
    """

    client_id: int
    dataset: Dataset
    poison_flags: np.ndarray = field(default=None)  # type: ignore[assignment]
    source_indices: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        n = len(self.dataset)
        flags = np.zeros(n, dtype=bool) if self.poison_flags is None else np.array(self.poison_flags, dtype=bool)
        sources = (
            np.arange(n, dtype=np.int64)
            if self.source_indices is None
            else np.array(self.source_indices, dtype=np.int64)
        )
        if flags.shape != (n,) or sources.shape != (n,):
            raise ValueError(f"client {self.client_id}: bookkeeping arrays must have length {n}")
        object.__setattr__(self, "poison_flags", _frozen(flags))
        object.__setattr__(self, "source_indices", _frozen(sources))

    def __len__(self) -> int:
        return len(self.dataset)

    @property
    def poisoned_indices(self) -> np.ndarray:
        return np.flatnonzero(self.poison_flags)

    def subset(self, indices: Sequence[int] | np.ndarray) -> "ClientDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return ClientDataset(
            client_id=self.client_id,
            dataset=self.dataset.subset(idx),
            poison_flags=self.poison_flags[idx],
            source_indices=self.source_indices[idx],
        )


class PartitionScheme(str, Enum):
    IID = "iid"
    DIRICHLET = "dirichlet"


@dataclass(frozen=True)
class PartitionSpec:
    num_clients: int
    scheme: PartitionScheme = PartitionScheme.IID
    alpha: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "scheme", PartitionScheme(self.scheme))
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if self.scheme is PartitionScheme.DIRICHLET and not self.alpha > 0:
            raise ValueError("alpha must be > 0 for the dirichlet scheme")


# --------------------------------------------------------------------------
# IDX files
# --------------------------------------------------------------------------


def _open_idx(path: Path) -> BinaryIO:
    if path.suffix == ".gz":
        return gzip.open(path, "rb")  # type: ignore[return-value]
    return open(path, "rb")


def _read_exact(handle: BinaryIO, size: int, path: Path, what: str) -> bytes:
    data = handle.read(size)
    if len(data) != size:
        raise TruncatedPayloadError(f"{path}: truncated {what}, expected {size} bytes, got {len(data)}")
    return data


def load_idx(
    images_path: str | Path, labels_path: str | Path, num_classes: Optional[int] = None
) -> Dataset:
    """Decode an MNIST-style IDX image/label pair into a Dataset.

    Pixel bytes are scaled into [0, 1] by dividing by 255. ``num_classes``
    defaults to ``max(label) + 1``.
    """

    images_path, labels_path = Path(images_path), Path(labels_path)
    with _open_idx(images_path) as handle:
        (magic,) = struct.unpack(">I", _read_exact(handle, 4, images_path, "magic"))
        if magic != IDX_IMAGES_MAGIC:
            raise BadMagicError(f"{images_path}: wrong magic number 0x{magic:08x} for an image file")
        count, rows, cols = struct.unpack(">III", _read_exact(handle, 12, images_path, "header"))
        pixels = _read_exact(handle, count * rows * cols, images_path, "payload")
    with _open_idx(labels_path) as handle:
        (magic,) = struct.unpack(">I", _read_exact(handle, 4, labels_path, "magic"))
        if magic != IDX_LABELS_MAGIC:
            raise BadMagicError(f"{labels_path}: wrong magic number 0x{magic:08x} for a label file")
        (label_count,) = struct.unpack(">I", _read_exact(handle, 4, labels_path, "header"))
        if label_count != count:
            raise CountMismatchError(
                f"{images_path} holds {count} images but {labels_path} holds {label_count} labels"
            )
        raw_labels = _read_exact(handle, label_count, labels_path, "payload")

    features = np.frombuffer(pixels, dtype=np.uint8).reshape(count, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 0
    LOGGER.info("Loaded %d samples (%dx%d) from %s", count, rows, cols, images_path)
    return Dataset(features=features, labels=labels, num_classes=num_classes, image_shape=(rows, cols))


def write_idx(ds: Dataset, images_path: str | Path, labels_path: str | Path) -> None:
    """Write an image-shaped Dataset with features in [0, 1] as an IDX pair."""

    if len(ds) and (ds.features.min() < 0.0 or ds.features.max() > 1.0):
        raise ValueError("only features inside [0, 1] can be written as IDX pixels")
    rows, cols = ds.image_shape
    pixels = np.rint(ds.features * 255.0).astype(np.uint8)
    with open(images_path, "wb") as handle:
        handle.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, len(ds), rows, cols))
        handle.write(pixels.tobytes())
    with open(labels_path, "wb") as handle:
        handle.write(struct.pack(">II", IDX_LABELS_MAGIC, len(ds)))
        handle.write(ds.labels.astype(np.uint8).tobytes())


# --------------------------------------------------------------------------
# Synthetic blobs
# --------------------------------------------------------------------------


def generate_synthetic(
    k: int, per_class: int, dim: int, spread: float, center_gap: float, seed: int | Sequence[int]
) -> Dataset:
    """Isotropic Gaussian blobs; class ``c`` is centered at ``center_gap * e_(c mod dim)``.

    Values are not clipped to the unit box. Samples are ordered class by class.
    """

    if k < 1 or per_class < 1 or dim < 1:
        raise ValueError("k, per_class and dim must all be >= 1")
    if not spread > 0 or not center_gap > 0:
        raise ValueError("spread and center_gap must be > 0")
    rng = np.random.default_rng(seed)
    centers = np.zeros((k, dim))
    centers[np.arange(k), np.arange(k) % dim] = center_gap
    noise = rng.normal(0.0, spread, size=(k, per_class, dim))
    features = (centers[:, None, :] + noise).reshape(k * per_class, dim)
    labels = np.repeat(np.arange(k), per_class)
    return Dataset(features=features, labels=labels, num_classes=k, image_shape=(1, dim))


# --------------------------------------------------------------------------
# Partitioning
# --------------------------------------------------------------------------


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    raw = proportions * total
    counts = np.floor(raw).astype(np.int64)
    remainder = total - int(counts.sum())
    # stable sort keeps the lowest client id first among equal fractions
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:remainder]] += 1
    return counts


def _iid_split(n: int, spec: PartitionSpec, rng: np.random.Generator) -> List[np.ndarray]:
    order = rng.permutation(n)
    base, extra = divmod(n, spec.num_clients)
    sizes = [base + (1 if cid < extra else 0) for cid in range(spec.num_clients)]
    bounds = np.cumsum([0] + sizes)
    return [order[bounds[cid] : bounds[cid + 1]] for cid in range(spec.num_clients)]


def _dirichlet_split(labels: np.ndarray, num_classes: int, spec: PartitionSpec, rng: np.random.Generator) -> List[np.ndarray]:
    proportions = rng.dirichlet([spec.alpha] * spec.num_clients, size=max(num_classes, 1))
    buckets: List[List[int]] = [[] for _ in range(spec.num_clients)]
    for cls in range(num_classes):
        members = np.flatnonzero(labels == cls)
        rng.shuffle(members)
        counts = _largest_remainder(proportions[cls], len(members))
        start = 0
        for cid, count in enumerate(counts):
            buckets[cid].extend(members[start : start + count].tolist())
            start += count
    return [np.sort(np.asarray(bucket, dtype=np.int64)) for bucket in buckets]


def partition(ds: Dataset, spec: PartitionSpec) -> List[ClientDataset]:
    """Disjointly assign every sample of ``ds`` to one of ``spec.num_clients`` clients."""

    n = len(ds)
    if n == 0:
        raise ValueError("cannot partition an empty dataset")
    if spec.num_clients > n:
        raise ValueError(f"{spec.num_clients} clients requested for only {n} samples")
    rng = np.random.default_rng(spec.seed)
    if spec.scheme is PartitionScheme.IID:
        shards = _iid_split(n, spec, rng)
    else:
        shards = _dirichlet_split(ds.labels, ds.num_classes, spec, rng)
    clients = [
        ClientDataset(client_id=cid, dataset=ds.subset(shard), source_indices=shard)
        for cid, shard in enumerate(shards)
    ]
    LOGGER.debug("Partition sizes (%s): %s", spec.scheme.value, [len(c) for c in clients])
    return clients


def ceil_fraction(fraction: float, total: int) -> int:
    """``ceil(fraction * total)`` without float noise pushing exact products up."""

    return int(math.ceil(round(fraction * total, 9)))


__all__ = [
    "Sample",
    "Dataset",
    "ClientDataset",
    "PartitionScheme",
    "PartitionSpec",
    "IdxFormatError",
    "BadMagicError",
    "CountMismatchError",
    "TruncatedPayloadError",
    "load_idx",
    "write_idx",
    "generate_synthetic",
    "partition",
    "ceil_fraction",
]
