"""Dataset ingestion, splits and preprocessing.

Canonical CIFAR binary layouts are read bit-exactly:

* CIFAR-10: records of 3073 bytes (1 label + 3072 pixels, channel-major
  R,G,B, row-major within channel); five train batch files plus one test file,
  10000 records each.
* CIFAR-100: records of 3074 bytes (coarse label, fine label, 3072 pixels);
  one 50000-record train file, one 10000-record test file.  Fine labels are
  used.

Loaded pixel values stay in [0, 255].  An internal cache format ("FTDS")
stores any dataset, including float-valued distorted ones, in one file.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError

CIFAR10_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR10_TEST_FILE = "test_batch.bin"
_REC10 = 3073
_REC100 = 3074


@dataclass
class Dataset:
    images: np.ndarray          # [N,3,32,32], uint8 or float32, values in [0,255]
    labels: np.ndarray          # [N] int64
    class_count: int
    split: str = "train"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise InputError("images and labels disagree on N")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise InputError("labels out of range for class_count")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices, split: str | None = None) -> "Dataset":
        idx = np.asarray(indices)
        prov = dict(self.provenance)
        prov["subset_of"] = prov.get("subset_of", prov.get("source", "?"))
        return Dataset(self.images[idx], self.labels[idx], self.class_count,
                       split or self.split, prov)


@dataclass(frozen=True)
class SplitSpec:
    ratio: float = 0.8
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.ratio < 1.0:
            raise InputError(f"split ratio must be in (0,1), got {self.ratio}")


@dataclass(frozen=True)
class PreprocStats:
    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    def to_json(self) -> str:
        return json.dumps({"mean": list(self.mean), "std": list(self.std)})

    @staticmethod
    def from_json(text: str) -> "PreprocStats":
        d = json.loads(text)
        return PreprocStats(tuple(d["mean"]), tuple(d["std"]))


# ---------------------------------------------------------------------------
# canonical CIFAR binaries
# ---------------------------------------------------------------------------

def _read_batch(path: Path, record_size: int, count: int) -> np.ndarray:
    if not path.exists():
        raise FormatError(f"missing dataset file {path}")
    expected = record_size * count
    actual = path.stat().st_size
    if actual != expected:
        raise FormatError(f"{path}: expected {expected} bytes "
                          f"({count} records of {record_size}), found {actual}")
    return np.frombuffer(path.read_bytes(), dtype=np.uint8).reshape(count, record_size)


def load_cifar10(path: str | Path, split: str = "train") -> Dataset:
    root = Path(path)
    files = CIFAR10_TRAIN_FILES if split == "train" else [CIFAR10_TEST_FILE]
    recs = np.concatenate([_read_batch(root / f, _REC10, 10000) for f in files])
    labels = recs[:, 0].astype(np.int64)
    images = recs[:, 1:].reshape(-1, 3, 32, 32)
    return Dataset(images, labels, 10, split, {"source": f"cifar10:{split}"})


def load_cifar100(path: str | Path, split: str = "train") -> Dataset:
    root = Path(path)
    name = "train.bin" if split == "train" else "test.bin"
    count = 50000 if split == "train" else 10000
    recs = _read_batch(root / name, _REC100, count)
    labels = recs[:, 1].astype(np.int64)  # fine label
    images = recs[:, 2:].reshape(-1, 3, 32, 32)
    return Dataset(images, labels, 100, split, {"source": f"cifar100:{split}"})


# ---------------------------------------------------------------------------
# internal cache format
# ---------------------------------------------------------------------------

_DS_MAGIC = b"FTDS"
_DS_VERSION = 1
_DS_DTYPES = {0: np.dtype(np.uint8), 1: np.dtype("<f4")}


def save_internal(dataset: Dataset, path: str | Path) -> None:
    dtype_code = 0 if dataset.images.dtype == np.uint8 else 1
    buf = io.BytesIO()
    buf.write(_DS_MAGIC)
    buf.write(struct.pack("<I", _DS_VERSION))
    buf.write(struct.pack("<Q", len(dataset)))
    buf.write(struct.pack("<I", dataset.class_count))
    buf.write(struct.pack("<B", dtype_code))
    for text in (dataset.split, json.dumps(dataset.provenance, sort_keys=True)):
        raw = text.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
    buf.write(dataset.labels.astype("<i8").tobytes())
    images = dataset.images.astype(_DS_DTYPES[dtype_code])
    buf.write(np.ascontiguousarray(images).tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_internal(path: str | Path) -> Dataset:
    buf = io.BytesIO(Path(path).read_bytes())

    def take(n: int, what: str) -> bytes:
        b = buf.read(n)
        if len(b) != n:
            raise FormatError(f"{path}: truncated while reading {what}")
        return b

    if take(4, "magic") != _DS_MAGIC:
        raise FormatError(f"{path}: not an internal dataset file")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != _DS_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    (n,) = struct.unpack("<Q", take(8, "count"))
    (class_count,) = struct.unpack("<I", take(4, "class count"))
    (dtype_code,) = struct.unpack("<B", take(1, "dtype"))
    if dtype_code not in _DS_DTYPES:
        raise FormatError(f"{path}: unknown dtype code {dtype_code}")
    (slen,) = struct.unpack("<I", take(4, "split length"))
    split = take(slen, "split").decode("utf-8")
    (plen,) = struct.unpack("<I", take(4, "provenance length"))
    provenance = json.loads(take(plen, "provenance").decode("utf-8"))
    labels = np.frombuffer(take(n * 8, "labels"), dtype="<i8").copy()
    dtype = _DS_DTYPES[dtype_code]
    raw = take(n * 3 * 32 * 32 * dtype.itemsize, "pixels")
    images = np.frombuffer(raw, dtype=dtype).reshape(n, 3, 32, 32).copy()
    return Dataset(images, labels, class_count, split, provenance)


# ---------------------------------------------------------------------------
# splits and preprocessing
# ---------------------------------------------------------------------------

def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Partition into (train, val), stratified per class by default.

    Per-class counts are floored; leftover slots go to classes drawn by the
    seeded RNG so the split is exhaustive and disjoint.
    """
    rng = np.random.default_rng(spec.seed)
    n = len(dataset)
    if spec.stratified:
        train_idx: list[np.ndarray] = []
        val_idx: list[np.ndarray] = []
        total_train = int(np.floor(spec.ratio * n))
        per_class = [np.flatnonzero(dataset.labels == c) for c in range(dataset.class_count)]
        base = [int(np.floor(spec.ratio * len(ix))) for ix in per_class]
        remainder = total_train - sum(base)
        eligible = [c for c, ix in enumerate(per_class) if base[c] < len(ix)]
        extra = set(rng.choice(eligible, size=remainder, replace=False)) if remainder > 0 else set()
        for c, ix in enumerate(per_class):
            ix = ix[rng.permutation(len(ix))]
            k = base[c] + (1 if c in extra else 0)
            train_idx.append(ix[:k])
            val_idx.append(ix[k:])
        tr = np.sort(np.concatenate(train_idx))
        va = np.sort(np.concatenate(val_idx))
    else:
        perm = rng.permutation(n)
        k = int(np.floor(spec.ratio * n))
        tr, va = np.sort(perm[:k]), np.sort(perm[k:])
    return dataset.subset(tr, "train"), dataset.subset(va, "val")


def compute_stats(images: np.ndarray) -> PreprocStats:
    """Per-channel mean/std of images scaled to [0,1]; float64 accumulation."""
    x = images.astype(np.float64) / 255.0
    mean = x.mean(axis=(0, 2, 3))
    std = x.std(axis=(0, 2, 3))
    return PreprocStats(tuple(mean.tolist()), tuple(std.tolist()))


def preprocess(images: np.ndarray, stats: PreprocStats, dtype=np.float32) -> np.ndarray:
    """(value/255 - mean)/std per channel; zero-std channels are guarded."""
    mean = np.asarray(stats.mean).reshape(1, 3, 1, 1)
    std = np.maximum(np.asarray(stats.std).reshape(1, 3, 1, 1), 1e-8)
    x = images.astype(np.float64) / 255.0
    return ((x - mean) / std).astype(dtype)
