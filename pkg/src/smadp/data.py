"""Dataset ingestion (IDX files, synthetic blobs) and Poisson subsampling."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, LengthError, ParameterError
from .numerics import RandomStream, bernoulli_mask, gaussian_vector

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Immutable feature matrix (one row per example) with integer labels."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float)
        labels = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise ParameterError("features must be a non-empty (n, d) matrix")
        if labels.shape != (feats.shape[0],):
            raise ParameterError("labels must be one integer per example")
        if not np.all(np.isfinite(feats)):
            raise ParameterError("features must be finite")
        if self.num_classes < 2:
            raise ParameterError("num_classes must be >= 2")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ParameterError("labels must lie in [0, num_classes)")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class SampleBatch:
    """One Poisson subsampling event over a dataset of n examples."""

    mask: np.ndarray
    q: float
    expected_lot: float
    indices: np.ndarray = field(init=False)

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "indices", np.flatnonzero(mask))

    def __len__(self) -> int:
        return int(self.indices.size)


def _read_be32(buf: bytes, offset: int, path: str) -> int:
    if offset + 4 > len(buf):
        raise LengthError(f"{path}: truncated header (need 4 bytes at offset {offset})")
    return struct.unpack_from(">I", buf, offset)[0]


def load_idx(images_path, labels_path, limit: int | None = None) -> Dataset:
    """Load an IDX image/label pair, scaling raw bytes to [0, 1].

    Headers are big-endian 32-bit words: magic, then the dimension sizes
    (count, rows, cols for images; count for labels), then raw bytes.
    """
    if limit is not None and limit < 1:
        raise ParameterError("limit must be a positive integer")
    with open(images_path, "rb") as fh:
        img_buf = fh.read()
    with open(labels_path, "rb") as fh:
        lab_buf = fh.read()

    magic = _read_be32(img_buf, 0, str(images_path))
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(
            f"{images_path}: bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}"
        )
    count = _read_be32(img_buf, 4, str(images_path))
    rows = _read_be32(img_buf, 8, str(images_path))
    cols = _read_be32(img_buf, 12, str(images_path))
    pixel_bytes = count * rows * cols
    if len(img_buf) < 16 + pixel_bytes:
        raise LengthError(
            f"{images_path}: expected {pixel_bytes} pixel bytes, found {len(img_buf) - 16}"
        )

    magic = _read_be32(lab_buf, 0, str(labels_path))
    if magic != IDX_LABEL_MAGIC:
        raise FormatError(
            f"{labels_path}: bad label magic 0x{magic:08x}, expected 0x{IDX_LABEL_MAGIC:08x}"
        )
    lab_count = _read_be32(lab_buf, 4, str(labels_path))
    if len(lab_buf) < 8 + lab_count:
        raise LengthError(
            f"{labels_path}: expected {lab_count} label bytes, found {len(lab_buf) - 8}"
        )
    if lab_count != count:
        raise LengthError(
            f"label count {lab_count} does not match image count {count}"
        )

    keep = count if limit is None else min(count, limit)
    if keep < 1:
        raise LengthError("IDX pair holds no examples")
    pixels = np.frombuffer(img_buf, dtype=np.uint8, count=keep * rows * cols, offset=16)
    features = pixels.astype(float).reshape(keep, rows * cols) / 255.0
    labels = np.frombuffer(lab_buf, dtype=np.uint8, count=keep, offset=8).astype(np.int64)
    return Dataset(features, labels, num_classes=10, name="idx")


def _class_directions(num_classes: int, dim: int) -> np.ndarray:
    """Fixed, well-separated unit directions: evenly spaced on the circle
    spanned by the first two coordinates (sign-alternating when dim == 1)."""
    directions = np.zeros((num_classes, dim))
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    if dim == 1:
        directions[:, 0] = np.where(np.arange(num_classes) % 2 == 0, 1.0, -1.0)
    else:
        directions[:, 0] = np.cos(angles)
        directions[:, 1] = np.sin(angles)
    return directions


def gen_synthetic(stream: RandomStream, n: int, dim: int, classes: int) -> Dataset:
    """Balanced Gaussian blobs: class c centered at 3 * (fixed unit direction)."""
    if classes < 2:
        raise ParameterError("classes must be >= 2")
    if n < 1 or dim < 1:
        raise ParameterError("n and dim must be positive")
    labels = np.arange(n, dtype=np.int64) % classes
    centers = 3.0 * _class_directions(classes, dim)
    noise = gaussian_vector(stream.at(purpose="data"), n * dim, 1.0).reshape(n, dim)
    features = centers[labels] + noise
    return Dataset(features, labels, num_classes=classes, name="synthetic")


def poisson_sample(stream: RandomStream, n: int, q: float) -> SampleBatch:
    """Include each of n indices independently with probability q."""
    if n < 1:
        raise ParameterError("n must be positive")
    q = float(q)
    if not 0.0 <= q <= 1.0:
        raise ParameterError(f"sampling probability must lie in [0, 1], got {q}")
    mask = bernoulli_mask(stream.at(purpose="sampling"), n, q)
    return SampleBatch(mask=mask, q=q, expected_lot=q * n)
