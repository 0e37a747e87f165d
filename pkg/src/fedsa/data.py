"""Datasets, client partitions and the MNIST IDX container."""
from __future__ import annotations

import os
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, InvalidInput
from .rng import RngStream, as_generator

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
DATA_ROOT_ENV = "FEDSA_DATA_ROOT"


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise InvalidInput("features must be (n, d) and aligned with labels")
        if self.n_classes is None:
            self.n_classes = int(self.labels.max()) + 1 if self.labels.size else 0

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)


@dataclass
class Partition:
    assignments: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.assignments)

    def sizes(self) -> np.ndarray:
        return np.array([len(a) for a in self.assignments])

    def validate(self, n_samples: int) -> None:
        allidx = np.concatenate(self.assignments) if self.assignments else np.array([], dtype=np.int64)
        if len(np.unique(allidx)) != len(allidx):
            raise InvalidInput("partition shards overlap")
        if allidx.size and (allidx.min() < 0 or allidx.max() >= n_samples):
            raise InvalidInput("partition refers to indices outside the dataset")
        if any(len(a) == 0 for a in self.assignments):
            raise InvalidInput("partition has an empty shard")


def iid_partition(data: Dataset, n_clients: int, rng) -> Partition:
    """Class-stratified IID split.

    Each class is shuffled and dealt round-robin; the dealing position carries
    over from one class to the next, so per-class counts differ by at most one
    between clients and totals stay balanced as well.
    """
    if n_clients < 1 or n_clients > len(data):
        raise InvalidInput(f"cannot split {len(data)} samples across {n_clients} clients")
    gen = as_generator(rng)
    shards: list[list[int]] = [[] for _ in range(n_clients)]
    pos = 0
    for c in range(data.n_classes):
        idx = np.flatnonzero(data.labels == c)
        idx = idx[gen.permutation(len(idx))]
        for j in idx:
            shards[pos % n_clients].append(int(j))
            pos += 1
    return Partition([np.sort(np.array(s, dtype=np.int64)) for s in shards])


def _dirichlet_draw(data: Dataset, n_clients: int, alpha: float, gen) -> list[list[int]]:
    shards: list[list[int]] = [[] for _ in range(n_clients)]
    for c in range(data.n_classes):
        idx = np.flatnonzero(data.labels == c)
        if idx.size == 0:
            continue
        idx = idx[gen.permutation(len(idx))]
        props = gen.dirichlet(np.full(n_clients, alpha))
        cuts = (np.cumsum(props) * len(idx)).astype(np.int64)[:-1]
        for i, part in enumerate(np.split(idx, cuts)):
            shards[i].extend(int(j) for j in part)
    return shards


def dirichlet_partition(data: Dataset, n_clients: int, alpha: float, rng,
                        max_retries: int = 100) -> Partition:
    """Label-skewed split: per class, proportions ~ Dirichlet(alpha * 1_N).

    Draws are repeated up to ``max_retries`` times until no shard is empty;
    after that, empty shards each take one sample from the current largest.
    """
    if alpha <= 0:
        raise InvalidInput("alpha must be positive")
    if n_clients < 1:
        raise InvalidInput("need at least one client")
    if n_clients > len(data):
        raise ConfigError(f"{n_clients} clients cannot all be non-empty with {len(data)} samples")
    gen = as_generator(rng)
    for _ in range(max_retries):
        shards = _dirichlet_draw(data, n_clients, alpha, gen)
        if all(shards):
            break
    else:
        for i in range(n_clients):
            if not shards[i]:
                donor = max(range(n_clients), key=lambda j: (len(shards[j]), -j))
                if len(shards[donor]) < 2:
                    raise ConfigError("cannot make every Dirichlet shard non-empty")
                shards[i].append(shards[donor].pop())
    return Partition([np.sort(np.array(s, dtype=np.int64)) for s in shards])


def label_entropy(data: Dataset, part: Partition) -> np.ndarray:
    """Per-client label entropy normalised by log(n_classes)."""
    out = []
    for a in part.assignments:
        p = np.bincount(data.labels[a], minlength=data.n_classes) / len(a)
        p = p[p > 0]
        out.append(float(-(p * np.log(p)).sum() / np.log(data.n_classes)))
    return np.array(out)


def gen_synthetic(n_classes: int, n_features: int, n_samples: int, separation: float, rng) -> Dataset:
    """Unit-covariance Gaussian blobs whose means are pairwise ``separation`` apart.

    Means are ``separation / sqrt(2)`` times distinct basis vectors, which needs
    ``n_features >= n_classes``. Labels are assigned round-robin so classes are
    balanced.
    """
    if min(n_classes, n_features, n_samples) < 1 or separation < 0:
        raise InvalidInput("synthetic generator needs positive sizes and separation >= 0")
    if n_features < n_classes:
        raise InvalidInput("n_features must be >= n_classes to place equidistant means")
    gen = as_generator(rng)
    labels = np.arange(n_samples) % n_classes
    labels = labels[gen.permutation(n_samples)]
    means = np.zeros((n_classes, n_features))
    means[np.arange(n_classes), np.arange(n_classes)] = separation / np.sqrt(2.0)
    x = means[labels] + gen.standard_normal((n_samples, n_features))
    return Dataset(x, labels, n_classes)


# -- IDX ---------------------------------------------------------------------

def _read_header(buf: bytes, magic: int, ndim: int, path) -> tuple[int, ...]:
    need = 4 + 4 * ndim
    if len(buf) < need:
        raise FormatError(f"{path}: truncated header", offset=len(buf))
    got = struct.unpack(">I", buf[:4])[0]
    if got != magic:
        raise FormatError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}", offset=0)
    return struct.unpack(">" + "I" * ndim, buf[4:need])


def read_idx_images(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    n, rows, cols = _read_header(buf, IMAGES_MAGIC, 3, path)
    body = 16 + n * rows * cols
    if len(buf) < body:
        raise FormatError(f"{path}: truncated pixel data, expected {body} bytes", offset=len(buf))
    return np.frombuffer(buf, dtype=np.uint8, count=n * rows * cols, offset=16).reshape(n, rows * cols)


def read_idx_labels(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    (n,) = _read_header(buf, LABELS_MAGIC, 1, path)
    if len(buf) < 8 + n:
        raise FormatError(f"{path}: truncated label data, expected {8 + n} bytes", offset=len(buf))
    return np.frombuffer(buf, dtype=np.uint8, count=n, offset=8).astype(np.int64)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABELS_MAGIC, labels.size))
        fh.write(labels.tobytes())


def load_mnist_idx(images_path, labels_path) -> Dataset:
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{labels_path}: {labels.shape[0]} labels for {images.shape[0]} images", offset=4)
    return Dataset(images.astype(np.float64) / 255.0, labels, 10)


def data_root(root=None) -> Path:
    if root is not None:
        return Path(root)
    return Path(os.environ.get(DATA_ROOT_ENV, Path.home() / ".cache" / "fedsa"))


def load_mnist(root=None, train_subset: int | None = 10000) -> tuple[Dataset, Dataset]:
    """Train/test MNIST from ``<root>/mnist/{train,t10k}-*-ubyte``.

    The first ``train_subset`` training images are kept. When fewer are on disk
    the whole file is used with a warning.
    """
    base = data_root(root) / "mnist"
    try:
        train = load_mnist_idx(base / "train-images-idx3-ubyte", base / "train-labels-idx1-ubyte")
        test = load_mnist_idx(base / "t10k-images-idx3-ubyte", base / "t10k-labels-idx1-ubyte")
    except FileNotFoundError as exc:
        raise ConfigError(f"MNIST not found under {base} ({exc.filename}); "
                          f"run scripts/fetch_mnist.py or set {DATA_ROOT_ENV}") from exc
    if train_subset is not None:
        if len(train) < train_subset:
            warnings.warn(f"only {len(train)} MNIST training images under {base}, wanted {train_subset}")
        else:
            train = train.subset(np.arange(train_subset))
    return train, test
