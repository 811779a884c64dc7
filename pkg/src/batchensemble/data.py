"""Datasets: synthetic blobs, IDX ingestion, task splits, subsampling, corruption."""
import csv
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .core import SeededRng
from .errors import ArgumentError, ConfigError, FormatError

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    name: str = "dataset"
    source_index: np.ndarray = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ArgumentError(f"features {self.features.shape} and labels {self.labels.shape} disagree")
        if self.features.shape[0] < 1:
            raise ArgumentError("a dataset needs at least one example")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ArgumentError(f"labels must lie in [0, {self.n_classes})")
        if not np.all(np.isfinite(self.features)):
            raise ArgumentError("features contain NaN or Inf")
        if self.source_index is None:
            self.source_index = np.arange(self.features.shape[0])

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def take(self, idx, name=None):
        return Dataset(self.features[idx], self.labels[idx], self.n_classes, name or self.name,
                       self.source_index[idx])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label"] + [f"x{j}" for j in range(self.dim)])
            for row, lab in zip(self.features, self.labels):
                w.writerow([int(lab)] + [repr(float(v)) for v in row])


@dataclass
class Task:
    train: Dataset
    test: Dataset
    classes: tuple
    head_id: int


@dataclass
class TaskSequence:
    tasks: list = field(default_factory=list)

    def __post_init__(self):
        if not self.tasks:
            raise ArgumentError("a task sequence needs at least one task")
        seen = set()
        for t in self.tasks:
            overlap = seen & set(t.classes)
            if overlap:
                raise ArgumentError(f"task {t.head_id} repeats classes {sorted(overlap)}")
            seen |= set(t.classes)

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i):
        return self.tasks[i]


def gen_blobs(n_classes, n_per_class, dim, spread, seed, center_scale=1.0, name="blobs"):
    """Isotropic Gaussian clusters around seeded random centers.

    Centers are drawn from N(0, center_scale^2 I); points add N(0, spread^2 I).
    Rows are ordered by class.
    """
    if n_classes < 2 or dim < 2 or n_per_class < 1 or spread < 0:
        raise ArgumentError(f"invalid blob parameters C={n_classes}, n={n_per_class}, dim={dim}, spread={spread}")
    rng = SeededRng(seed).child("data")
    centers = rng.child(0).normal(0.0, center_scale, size=(n_classes, dim))
    noise = rng.child(1).normal(0.0, 1.0, size=(n_classes, n_per_class, dim))
    X = (centers[:, None, :] + spread * noise).reshape(-1, dim)
    y = np.repeat(np.arange(n_classes), n_per_class)
    return Dataset(X, y, n_classes, name)


def blob_centers(n_classes, dim, seed, center_scale=1.0):
    return SeededRng(seed).child("data").child(0).normal(0.0, center_scale, size=(n_classes, dim))


def train_test_split(dataset, test_per_class, seed):
    """Stratified split holding out ``test_per_class`` examples of every class."""
    rng = SeededRng(seed).child("split")
    train_idx, test_idx = [], []
    for c in range(dataset.n_classes):
        idx = np.flatnonzero(dataset.labels == c)
        idx = idx[rng.child(c).permutation(idx.size)]
        if idx.size <= test_per_class:
            raise ArgumentError(f"class {c} has {idx.size} examples, cannot hold out {test_per_class}")
        test_idx.append(np.sort(idx[:test_per_class]))
        train_idx.append(np.sort(idx[test_per_class:]))
    return (dataset.take(np.concatenate(train_idx), dataset.name + "-train"),
            dataset.take(np.concatenate(test_idx), dataset.name + "-test"))


def unit_box(reference, *others):
    """Min-max scale every dataset into [0, 1] using ``reference``'s per-feature range."""
    lo = reference.features.min(axis=0)
    span = reference.features.max(axis=0) - lo
    span[span == 0] = 1.0
    out = []
    for ds in (reference,) + others:
        X = np.clip((ds.features - lo) / span, 0.0, 1.0)
        out.append(replace(ds, features=X))
    return out


def _read_header(buf, path, expected_magic, ndim_expected):
    if len(buf) < 8:
        raise FormatError(f"{path}: truncated header")
    magic, count = struct.unpack(">ii", buf[:8])
    if magic != expected_magic:
        raise FormatError(f"{path}: magic number {magic}, expected {expected_magic}")
    dims = [count]
    need = 8 + 4 * (ndim_expected - 1)
    if len(buf) < need:
        raise FormatError(f"{path}: truncated header")
    dims += list(struct.unpack(">" + "i" * (ndim_expected - 1), buf[8:need]))
    if any(d < 0 for d in dims):
        raise FormatError(f"{path}: negative dimension in header {dims}")
    return dims, need


def load_idx(images_path, labels_path, n_classes=None, name=None):
    """Load an IDX image/label pair (uint8 payloads) as a Dataset with pixels in [0, 1]."""
    with open(images_path, "rb") as fh:
        ibuf = fh.read()
    with open(labels_path, "rb") as fh:
        lbuf = fh.read()
    (n_img, rows, cols), ioff = _read_header(ibuf, images_path, IDX_IMAGE_MAGIC, 3)
    (n_lab,), loff = _read_header(lbuf, labels_path, IDX_LABEL_MAGIC, 1)
    if n_img != n_lab:
        raise FormatError(f"image count {n_img} does not match label count {n_lab}")
    if len(ibuf) - ioff != n_img * rows * cols:
        raise FormatError(f"{images_path}: expected {n_img * rows * cols} pixel bytes, found {len(ibuf) - ioff}")
    if len(lbuf) - loff != n_lab:
        raise FormatError(f"{labels_path}: expected {n_lab} label bytes, found {len(lbuf) - loff}")
    pixels = np.frombuffer(ibuf, dtype=np.uint8, offset=ioff).reshape(n_img, rows * cols)
    labels = np.frombuffer(lbuf, dtype=np.uint8, offset=loff).astype(np.int64)
    C = n_classes if n_classes is not None else int(labels.max()) + 1
    return Dataset(pixels.astype(np.float64) / 255.0, labels, C, name or "idx")


def write_idx(images_path, labels_path, images, labels):
    """Write uint8 images (N, rows, cols) and labels (N,) as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">iiii", IDX_IMAGE_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">ii", IDX_LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def split_tasks(dataset, T, seed, test=None):
    """Partition classes into ``T`` disjoint tasks of ``C / T`` classes each.

    The class permutation is seeded; labels inside each task are re-indexed to
    ``[0, C / T)`` in the order the classes appear in that task's block.
    ``test`` (optional) is split with the same class partition.
    """
    C = dataset.n_classes
    if T < 1 or C % T:
        raise ConfigError(f"{C} classes cannot be split evenly into {T} tasks")
    per = C // T
    if per < 2:
        raise ConfigError(f"each task needs at least 2 classes; {C} classes into {T} tasks gives {per}")
    order = SeededRng(seed).child("tasks").permutation(C)
    tasks = []
    for t in range(T):
        classes = tuple(int(c) for c in order[t * per:(t + 1) * per])
        tasks.append(Task(_restrict(dataset, classes, f"{dataset.name}-task{t}"),
                          _restrict(test, classes, f"{test.name}-task{t}") if test is not None else None,
                          classes, t))
    return TaskSequence(tasks)


def _restrict(ds, classes, name):
    remap = {c: j for j, c in enumerate(classes)}
    idx = np.flatnonzero(np.isin(ds.labels, classes))
    labels = np.array([remap[int(c)] for c in ds.labels[idx]], dtype=np.int64)
    return Dataset(ds.features[idx], labels, len(classes), name, ds.source_index[idx])


def subsample(dataset, fraction, seed):
    """Stratified sample keeping ``ceil(fraction * count)`` examples of every class."""
    if not 0.0 < fraction <= 1.0:
        raise ArgumentError(f"fraction must lie in (0, 1], got {fraction}")
    rng = SeededRng(seed).child("subsample")
    keep = []
    for c in range(dataset.n_classes):
        idx = np.flatnonzero(dataset.labels == c)
        if idx.size == 0:
            continue
        k = math.ceil(fraction * idx.size)
        keep.append(np.sort(idx[rng.child(c).permutation(idx.size)[:k]]))
    return dataset.take(np.concatenate(keep), f"{dataset.name}-{fraction:g}")


CORRUPTION_LEVELS = (1, 2, 3, 4, 5)


def corrupt(dataset, intensity, seed):
    """Additive Gaussian noise with sigma ``0.05 * intensity``, clipped to [0, 1]."""
    if intensity not in CORRUPTION_LEVELS or isinstance(intensity, bool):
        raise ArgumentError(f"corruption intensity must be one of {CORRUPTION_LEVELS}, got {intensity!r}")
    X = dataset.features
    if X.min() < 0.0 or X.max() > 1.0:
        raise ArgumentError("corruption expects features scaled to [0, 1]")
    noise = SeededRng(seed).child("corrupt", intensity).normal(0.0, 0.05 * intensity, size=X.shape)
    return replace(dataset, features=np.clip(X + noise, 0.0, 1.0), name=f"{dataset.name}-noise{intensity}")
