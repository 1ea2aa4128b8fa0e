"""Datasets: IDX (MNIST/FMNIST) ingestion, synthetic blobs, splits and batches."""
from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BadMagicError, CountMismatchError, ShapeError, TruncatedFileError
from .ndcore import make_rng

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
GZIP_MAGIC = b"\x1f\x8b"


@dataclass(frozen=True, eq=False)
class Dataset:
    images: np.ndarray  # (n, dim) float64
    labels: np.ndarray  # (n,) int64
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        if self.images.ndim != 2 or self.labels.shape != (self.images.shape[0],):
            raise ShapeError(f"images {self.images.shape} vs labels {self.labels.shape}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.images.shape[1]

    def subset(self, idx: np.ndarray, name: str | None = None) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.num_classes, name or self.name)


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[tuple[str, float], ...]
    seed: int = 0

    def __post_init__(self):
        if not self.fractions:
            raise ValueError("split needs at least one fraction")
        if any(f <= 0 for _, f in self.fractions):
            raise ValueError("every split fraction must be positive")
        if abs(sum(f for _, f in self.fractions) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        names = [n for n, _ in self.fractions]
        if len(set(names)) != len(names):
            raise ValueError("split names must be unique")


# --- IDX --------------------------------------------------------------------

def _read_maybe_gzip(path: Path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == GZIP_MAGIC:
        try:
            return gzip.decompress(raw)
        except (EOFError, gzip.BadGzipFile) as exc:
            raise TruncatedFileError(f"{path}: damaged gzip stream ({exc})") from exc
    return raw


def _parse_idx(buf: bytes, expected_magic: int, path) -> np.ndarray:
    if len(buf) < 4:
        raise TruncatedFileError(f"{path}: missing IDX header")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != expected_magic:
        raise BadMagicError(f"{path}: wrong magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(buf) < header_len:
        raise TruncatedFileError(f"{path}: truncated IDX header")
    shape = struct.unpack(f">{ndim}I", buf[4:header_len])
    count = math.prod(shape)
    payload = buf[header_len:]
    if len(payload) < count:
        raise TruncatedFileError(f"{path}: payload has {len(payload)} bytes, header promises {count}")
    return np.frombuffer(payload, dtype=np.uint8, count=count).reshape(shape)


def load_idx(images_path, labels_path, name: str = "mnist", num_classes: int | None = None) -> Dataset:
    """Load an IDX image/label file pair (optionally gzipped) into a Dataset.

    Pixels are scaled to [0, 1] by dividing by 255 and flattened per image.
    """
    images = _parse_idx(_read_maybe_gzip(images_path), IMAGE_MAGIC, images_path)
    labels = _parse_idx(_read_maybe_gzip(labels_path), LABEL_MAGIC, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    k = num_classes if num_classes is not None else (int(y.max()) + 1 if y.size else 0)
    return Dataset(x, y, k, name)


def save_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path,
             compress: bool = False) -> None:
    """Write uint8 ``images`` of shape (n, rows, cols) and ``labels`` as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    img = struct.pack(">I", IMAGE_MAGIC) + struct.pack(">3I", *images.shape) + images.tobytes()
    lab = struct.pack(">I", LABEL_MAGIC) + struct.pack(">I", labels.shape[0]) + labels.tobytes()
    for path, data in ((images_path, img), (labels_path, lab)):
        # mtime=0 keeps gzip output byte-stable
        Path(path).write_bytes(gzip.compress(data, mtime=0) if compress else data)


def to_uint8_images(d: Dataset, rows: int, cols: int) -> np.ndarray:
    """Invert the /255 scaling applied by :func:`load_idx`."""
    return np.rint(d.images * 255.0).astype(np.uint8).reshape(len(d), rows, cols)


# --- synthetic data ---------------------------------------------------------

def synth_blobs(rng: np.random.Generator, n: int, dim: int, classes: int, sep: float,
                name: str = "blobs") -> Dataset:
    """Gaussian blobs: class means on a sphere of radius ``sep``, unit noise.

    Labels are balanced (``n % classes`` classes get one extra sample) and
    shuffled. ``sep = 0`` gives indistinguishable classes.
    """
    if classes < 2 or dim < 1 or n < classes:
        raise ValueError(f"invalid blob counts n={n}, dim={dim}, classes={classes}")
    if sep < 0:
        raise ValueError("sep must be non-negative")
    directions = rng.standard_normal((classes, dim))
    means = sep * directions / np.linalg.norm(directions, axis=1, keepdims=True)
    labels = rng.permutation(np.arange(n) % classes).astype(np.int64)
    x = means[labels] + rng.standard_normal((n, dim))
    return Dataset(x, labels, classes, name)


# --- splits and batches -----------------------------------------------------

def split_sizes(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment; every size is within 1 of f*n."""
    exact = [f * n for f in fractions]
    sizes = [math.floor(e) for e in exact]
    order = sorted(range(len(exact)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split_indices(n: int, spec: SplitSpec) -> dict[str, np.ndarray]:
    perm = make_rng(spec.seed).permutation(n)
    sizes = split_sizes(n, [f for _, f in spec.fractions])
    out, start = {}, 0
    for (name, _), size in zip(spec.fractions, sizes):
        out[name] = perm[start:start + size]
        start += size
    return out


def split(d: Dataset, spec: SplitSpec) -> dict[str, Dataset]:
    return {name: d.subset(idx, f"{d.name}:{name}")
            for name, idx in split_indices(len(d), spec).items()}


def batches(d: Dataset | int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Index arrays covering one shuffled epoch; the last batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = d if isinstance(d, int) else len(d)
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]
