"""Dataset ingestion, persistence, stream batching and synthetic generation.

In-memory layout mirrors the math: features are (d, n) float32 with one
column per sample, labels are (c, n) uint8 with entries in {0, 1}. The
binary container is canonical; CSV is accepted for interchange.

Datasets are read-only after construction and safe to share across
threads; a StreamBatcher has a cursor and is single-consumer.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .hashing import FormatError

DATASET_MAGIC = b"FOHD"
DATASET_VERSION = 1


@dataclass
class Dataset:
    """Validated features + labels + stable global sample ids."""

    features: np.ndarray  # (d, n) float32
    labels: np.ndarray    # (c, n) uint8, 0/1
    ids: np.ndarray = None  # (n,) int64, dense in [0, n) at ingest

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if self.features.ndim != 2 or self.labels.ndim != 2:
            raise ValueError("features and labels must be 2-d")
        if self.features.shape[1] != self.labels.shape[1]:
            raise FormatError(
                f"sample count mismatch: {self.features.shape[1]} features "
                f"vs {self.labels.shape[1]} labels")
        if self.features.shape[0] < 1:
            raise ValueError("feature dimension must be >= 1")
        if not np.all(np.isfinite(self.features)):
            raise FormatError("non-finite feature values")
        if self.labels.size and self.labels.max() > 1:
            raise FormatError("label entries must be 0/1")
        if self.ids is None:
            self.ids = np.arange(self.n, dtype=np.int64)
        else:
            self.ids = np.ascontiguousarray(self.ids, dtype=np.int64)
            if self.ids.shape != (self.n,) or len(np.unique(self.ids)) != self.n:
                raise ValueError("ids must be unique, one per sample")
        self._dense_ids = bool(np.array_equal(self.ids, np.arange(self.n)))

    @property
    def d(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]

    @property
    def c(self) -> int:
        return self.labels.shape[0]

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(features=self.features[:, idx],
                       labels=self.labels[:, idx],
                       ids=self.ids[idx])

    def features_by_id(self, ids) -> np.ndarray:
        """Feature columns for global ids, assuming ids == column positions.

        Holds for ingested datasets (ids are dense 0..n-1); subsets built via
        take() fall back to a lookup.
        """
        ids = np.asarray(ids, dtype=np.int64)
        if self._dense_ids:
            return self.features[:, ids]
        pos = {int(g): i for i, g in enumerate(self.ids)}
        cols = np.array([pos[int(g)] for g in ids], dtype=np.int64)
        return self.features[:, cols]


# ---------------------------------------------------------------------------
# persistence


def save_dataset(ds: Dataset, path) -> None:
    """Binary container: header, sample-major f32 features, packed labels."""
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<IIIQ", DATASET_VERSION, ds.d, ds.c, ds.n))
        f.write(ds.features.T.astype("<f4").tobytes(order="C"))
        packed = np.packbits(ds.labels.T, axis=1, bitorder="little")
        f.write(packed.tobytes(order="C"))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != DATASET_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {DATASET_MAGIC!r}")
        header = f.read(20)
        if len(header) != 20:
            raise FormatError("truncated dataset header")
        version, d, c, n = struct.unpack("<IIIQ", header)
        if version != DATASET_VERSION:
            raise FormatError(f"unsupported dataset version {version}")
        buf = f.read(n * d * 4)
        if len(buf) != n * d * 4:
            raise FormatError("truncated feature block")
        features = np.frombuffer(buf, dtype="<f4").reshape(n, d).T
        bytes_per = (c + 7) // 8
        buf = f.read(n * bytes_per)
        if len(buf) != n * bytes_per:
            raise FormatError("truncated label block")
        packed = np.frombuffer(buf, dtype=np.uint8).reshape(n, bytes_per)
        labels = np.unpackbits(packed, axis=1, count=c, bitorder="little").T
        return Dataset(features=features.copy(), labels=labels.copy())


def save_dataset_csv(ds: Dataset, path) -> None:
    """One sample per line: d floats then c 0/1 ints. Header line is 'd,c'."""
    with open(path, "w") as f:
        f.write(f"{ds.d},{ds.c}\n")
        for j in range(ds.n):
            feats = ",".join(repr(float(x)) for x in ds.features[:, j])
            labs = ",".join(str(int(x)) for x in ds.labels[:, j])
            f.write(feats + "," + labs + "\n")


def load_dataset_csv(path) -> Dataset:
    with open(path) as f:
        header = f.readline().strip()
        parts = header.split(",")
        try:
            d, c = int(parts[0]), int(parts[1])
        except (ValueError, IndexError):
            raise FormatError(f"malformed header {header!r}, expected 'd,c'")
        feats, labs = [], []
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            vals = line.split(",")
            if len(vals) != d + c:
                raise FormatError(f"line {lineno}: expected {d + c} fields, got {len(vals)}")
            feats.append([float(x) for x in vals[:d]])
            labs.append([int(x) for x in vals[d:]])
    features = np.array(feats, dtype=np.float32).reshape(-1, d).T
    labels = np.array(labs, dtype=np.uint8).reshape(-1, c).T
    return Dataset(features=features, labels=labels)


def ingest(features_path, labels_path=None) -> Dataset:
    """Load and validate a dataset.

    With one argument the file may be the binary container or a combined
    CSV. With two arguments, features_path is a CSV of d floats per line
    and labels_path a CSV of c 0/1 ints per line; sample counts must match.
    """
    if labels_path is None:
        with open(features_path, "rb") as f:
            magic = f.read(4)
        if magic == DATASET_MAGIC:
            return load_dataset(features_path)
        return load_dataset_csv(features_path)
    features = np.loadtxt(features_path, delimiter=",", dtype=np.float64, ndmin=2)
    labels = np.loadtxt(labels_path, delimiter=",", dtype=np.int64, ndmin=2)
    if features.shape[0] != labels.shape[0]:
        raise FormatError(
            f"sample count mismatch: {features.shape[0]} features "
            f"vs {labels.shape[0]} labels")
    return Dataset(features=features.T, labels=labels.T)


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SyntheticSpec:
    """Gaussian-blob generator with multi-label overlap.

    Categories coincide with blobs: each sample carries its blob's label
    plus extra labels drawn uniformly from the other categories, the count
    drawn per sample from labels_per_sample (inclusive range).
    Deterministic per seed.
    """

    n_clusters: int
    dim: int
    n: int
    labels_per_sample: tuple[int, int] = (1, 1)
    cluster_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        if self.n < self.n_clusters:
            raise ValueError("need n >= n_clusters")
        lo, hi = self.labels_per_sample
        if not 1 <= lo <= hi:
            raise ValueError("labels_per_sample must satisfy 1 <= lo <= hi")
        if hi > self.n_clusters:
            raise ValueError(
                f"labels_per_sample upper bound {hi} exceeds category count "
                f"{self.n_clusters}")


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    c = spec.n_clusters
    centroids = rng.standard_normal((spec.dim, c))
    assign = rng.integers(0, c, size=spec.n)
    features = centroids[:, assign] + spec.cluster_std * rng.standard_normal(
        (spec.dim, spec.n))
    labels = np.zeros((c, spec.n), dtype=np.uint8)
    labels[assign, np.arange(spec.n)] = 1
    lo, hi = spec.labels_per_sample
    counts = rng.integers(lo, hi + 1, size=spec.n)
    for j in range(spec.n):
        extra = counts[j] - 1
        if extra > 0:
            others = np.delete(np.arange(c), assign[j])
            labels[rng.choice(others, size=extra, replace=False), j] = 1
    return Dataset(features=features.astype(np.float32), labels=labels)


# ---------------------------------------------------------------------------
# stream batching


@dataclass
class Batch:
    features: np.ndarray  # (d, n_t)
    labels: np.ndarray    # (c, n_t)
    ids: np.ndarray       # (n_t,) global ids
    stage: int


@dataclass
class StreamBatcher:
    """Splits a training set into stream batches of batch_size in a seeded
    permutation order. The remainder joins the final batch (a stream of
    18,015 at batch 2,000 yields 9 batches, the last holding 2,015), so a
    batch smaller than batch_size occurs only when n < batch_size.
    """

    dataset: Dataset
    batch_size: int
    seed: int = 0
    _order: np.ndarray = field(init=False, repr=False)
    _cursor: int = field(default=0, init=False, repr=False)
    _stage: int = field(default=0, init=False, repr=False)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        rng = np.random.default_rng(self.seed)
        self._order = rng.permutation(self.dataset.n).astype(np.int64)

    @property
    def num_batches(self) -> int:
        return max(1, self.dataset.n // self.batch_size) if self.dataset.n else 0

    @property
    def samples_seen(self) -> int:
        return self._cursor

    def next_batch(self) -> Batch | None:
        """The next stream batch, or None at end-of-stream."""
        n = self.dataset.n
        if self._cursor >= n:
            return None
        self._stage += 1
        if self._stage == self.num_batches:
            hi = n  # final batch absorbs the remainder
        else:
            hi = self._cursor + self.batch_size
        idx = self._order[self._cursor:hi]
        self._cursor = hi
        sub = self.dataset.take(idx)
        return Batch(features=sub.features, labels=sub.labels,
                     ids=self.dataset.ids[idx], stage=self._stage)

    def __iter__(self):
        while (b := self.next_batch()) is not None:
            yield b
