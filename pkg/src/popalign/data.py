"""Datasets, IDX parsing, global imbalance and Dirichlet client partitions."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ParseError

MAX_PARTITION_RETRIES = 100


@dataclass
class ClientDataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    owner_id: int = -1
    # True for rows produced by augmentation rather than taken from real data
    augmented: np.ndarray | None = None
    image_shape: tuple[int, int] | None = None
    # index of each row in the dataset it was carved from, -1 for synthesized rows
    source_index: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ConfigurationError("features must be 2-D with one row per label")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ConfigurationError("labels out of range")
        if self.augmented is None:
            self.augmented = np.zeros(len(self.labels), dtype=bool)
        if self.source_index is None:
            self.source_index = np.arange(len(self.labels))

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, idx, owner_id: int | None = None) -> "ClientDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return ClientDataset(
            self.features[idx],
            self.labels[idx],
            self.n_classes,
            self.owner_id if owner_id is None else owner_id,
            self.augmented[idx],
            self.image_shape,
            self.source_index[idx],
        )

    def indices_of(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)

    def with_owner(self, owner_id: int) -> "ClientDataset":
        return self.subset(np.arange(len(self)), owner_id)


def concat(parts: list[ClientDataset], owner_id: int = -1) -> ClientDataset:
    if not parts:
        raise ConfigurationError("nothing to concatenate")
    return ClientDataset(
        np.concatenate([p.features for p in parts]),
        np.concatenate([p.labels for p in parts]),
        parts[0].n_classes,
        owner_id,
        np.concatenate([p.augmented for p in parts]),
        parts[0].image_shape,
        np.concatenate([p.source_index for p in parts]),
    )


# ---------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 5
    per_class: int = 100
    n_features: int = 20
    separation: float = 1.0
    noise: float = 1.0
    seed: int = 0

    def validate(self) -> list[str]:
        errs = []
        if self.n_classes < 2:
            errs.append("n_classes must be >= 2")
        if self.per_class < 1:
            errs.append("per_class must be >= 1")
        if self.n_features < 1:
            errs.append("n_features must be >= 1")
        if self.separation < 0 or self.noise <= 0:
            errs.append("separation must be >= 0 and noise > 0")
        return errs


def class_means(spec: SyntheticSpec) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(spec.seed, spawn_key=(0,))))
    return rng.normal(0.0, spec.separation, size=(spec.n_classes, spec.n_features))


def synthesize(spec: SyntheticSpec, per_class: int | None = None, stream: int = 1) -> ClientDataset:
    """Gaussian blobs: class means are fixed by ``spec.seed``; ``stream`` selects
    an independent draw of samples around them (train/test/public pools)."""
    errs = spec.validate()
    if errs:
        raise ConfigurationError("; ".join(errs))
    per_class = spec.per_class if per_class is None else per_class
    means = class_means(spec)
    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(spec.seed, spawn_key=(stream,)))
    )
    labels = np.repeat(np.arange(spec.n_classes), per_class)
    features = means[labels] + rng.normal(0.0, spec.noise, size=(len(labels), spec.n_features))
    return ClientDataset(features, labels, spec.n_classes)


# ---------------------------------------------------------------------- IDX

_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


def parse_idx(raw: bytes) -> np.ndarray:
    """Decode an IDX buffer: two zero bytes, a type code, a rank byte, then
    ``rank`` big-endian uint32 dimensions and the row-major payload."""
    if len(raw) < 4:
        raise ParseError("truncated IDX magic number", len(raw))
    if raw[0] != 0 or raw[1] != 0:
        raise ParseError("IDX magic must start with two zero bytes", 0)
    dtype = _IDX_DTYPES.get(raw[2])
    if dtype is None:
        raise ParseError(f"unknown IDX type code 0x{raw[2]:02x}", 2)
    rank = raw[3]
    if rank == 0:
        raise ParseError("IDX rank must be positive", 3)
    header_end = 4 + 4 * rank
    if len(raw) < header_end:
        raise ParseError("truncated IDX dimension header", len(raw))
    dims = struct.unpack(f">{rank}I", raw[4:header_end])
    expected = int(np.prod(dims)) * dtype.itemsize
    payload = len(raw) - header_end
    if payload < expected:
        raise ParseError(
            f"truncated IDX payload: need {expected} bytes, have {payload}", len(raw)
        )
    if payload > expected:
        raise ParseError("trailing bytes after IDX payload", header_end + expected)
    arr = np.frombuffer(raw, dtype=dtype, count=int(np.prod(dims)), offset=header_end)
    return arr.reshape(dims).astype(dtype.newbyteorder("="))


def read_idx(path: str | Path) -> np.ndarray:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return parse_idx(f.read())


def write_idx(path: str | Path, arr: np.ndarray) -> None:
    codes = {v.newbyteorder("="): k for k, v in _IDX_DTYPES.items()}
    arr = np.asarray(arr)
    code = codes.get(arr.dtype.newbyteorder("="))
    if code is None:
        raise ConfigurationError(f"dtype {arr.dtype} has no IDX type code")
    header = bytes([0, 0, code, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.astype(_IDX_DTYPES[code]).tobytes())


def load_idx_dataset(images_path, labels_path, n_classes: int = 10) -> ClientDataset:
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise ConfigurationError(f"expected a rank-3 image tensor, got rank {images.ndim}")
    if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
        raise ConfigurationError("image and label counts differ")
    scale = 255.0 if images.dtype == np.uint8 else 1.0
    features = images.reshape(images.shape[0], -1).astype(np.float64) / scale
    return ClientDataset(features, labels.astype(np.int64), n_classes, image_shape=images.shape[1:])


# ------------------------------------------------------------- partitioning


def global_downsample(
    dataset: ClientDataset, keep_range: tuple[float, float], rng: np.random.Generator
) -> tuple[ClientDataset, np.ndarray]:
    """Keep a uniformly drawn fraction of every class, rounded down.

    Returns the reduced dataset and the drawn keep fractions.
    """
    lo, hi = keep_range
    if not (0 < lo <= hi <= 1):
        raise ConfigurationError(f"keep range must lie in (0, 1], got {keep_range}")
    fractions = rng.uniform(lo, hi, size=dataset.n_classes)
    keep = []
    for c in range(dataset.n_classes):
        idx = dataset.indices_of(c)
        if len(idx) == 0:
            continue
        # tolerate fractions like 0.5 * 100 landing at 49.999...
        k = int(np.floor(fractions[c] * len(idx) + 1e-9))
        if k == 0:
            raise ConfigurationError(f"class {c} would be emptied by downsampling")
        keep.append(np.sort(rng.choice(idx, size=k, replace=False)))
    return dataset.subset(np.concatenate(keep)), fractions


def dirichlet_weights(alpha: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Dirichlet(alpha, ..., alpha) draw by normalizing independent Gamma variates."""
    for _ in range(MAX_PARTITION_RETRIES):
        g = rng.standard_gamma(alpha, size=size)
        total = g.sum()
        if total > 0:
            return g / total
    raise ConfigurationError(f"Gamma({alpha}) draws kept underflowing to zero")


@dataclass(frozen=True)
class PartitionSpec:
    n_clients: int
    alpha: float
    imbalance: tuple[float, float] | None = None
    seed: int = 0


def dirichlet_partition(
    dataset: ClientDataset, n_clients: int, alpha: float, rng: np.random.Generator
) -> list[ClientDataset]:
    if n_clients < 1:
        raise ConfigurationError("need at least one client")
    if not alpha > 0:
        raise ConfigurationError("alpha must be positive")
    if n_clients > len(dataset):
        raise ConfigurationError("more clients than samples")
    for _ in range(MAX_PARTITION_RETRIES):
        owners = np.empty(len(dataset), dtype=np.int64)
        for c in range(dataset.n_classes):
            idx = dataset.indices_of(c)
            if len(idx) == 0:
                continue
            idx = rng.permutation(idx)
            q = dirichlet_weights(alpha, n_clients, rng)
            cuts = (np.cumsum(q)[:-1] * len(idx)).astype(np.int64)
            for k, part in enumerate(np.split(idx, cuts)):
                owners[part] = k
        sizes = np.bincount(owners, minlength=n_clients)
        if np.all(sizes > 0):
            return [dataset.subset(np.flatnonzero(owners == k), owner_id=k) for k in range(n_clients)]
    raise ConfigurationError(
        f"could not give every client a sample after {MAX_PARTITION_RETRIES} draws"
    )


def partition(dataset: ClientDataset, spec: PartitionSpec, rng: np.random.Generator):
    """Optional global imbalance followed by the Dirichlet split."""
    if spec.imbalance is not None:
        dataset, _ = global_downsample(dataset, spec.imbalance, rng)
    return dataset, dirichlet_partition(dataset, spec.n_clients, spec.alpha, rng)


# ----------------------------------------------------------- distributions


def label_distribution(dataset: ClientDataset) -> np.ndarray:
    if len(dataset) == 0:
        raise ConfigurationError("label distribution of an empty dataset")
    counts = dataset.class_counts()
    return counts / counts.sum()


def l2_distance(p, q) -> float:
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ConfigurationError("distributions have different lengths")
    return float(np.linalg.norm(p - q))
