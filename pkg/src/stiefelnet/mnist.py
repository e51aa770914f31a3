"""IDX-format dataset loading and a synthetic stand-in classification set.

The IDX binary layout is parsed bit-exactly: a big-endian 32-bit magic
(2051 for image files, 2049 for label files), big-endian 32-bit dimension
counts, then an unsigned 8-bit payload. Pixels are scaled to [0, 1] and
labels are one-hot encoded into ten rows.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linalg import as_rng

IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049
NUM_CLASSES = 10


class IdxParseError(RuntimeError):
    """Malformed IDX input (bad magic, truncation, or count mismatch)."""


@dataclass(frozen=True)
class MnistDataset:
    """Flattened images (features x samples) and one-hot labels (10 x samples)."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.images.shape[1] != self.labels.shape[1]:
            raise IdxParseError(
                f"sample counts differ: {self.images.shape[1]} images "
                f"vs {self.labels.shape[1]} labels"
            )
        sums = self.labels.sum(axis=0)
        if not np.all(sums == 1.0):
            raise IdxParseError("labels are not one-hot columns")

    @property
    def n_samples(self) -> int:
        return self.images.shape[1]

    def subset(self, n: int) -> "MnistDataset":
        return MnistDataset(images=self.images[:, :n].copy(), labels=self.labels[:, :n].copy())


def _read_header(data: bytes, path, expected_magic: int, n_dims: int):
    need = 4 * (1 + n_dims)
    if len(data) < need:
        raise IdxParseError(f"{path}: truncated header ({len(data)} bytes)")
    magic = struct.unpack_from(">i", data, 0)[0]
    if magic != expected_magic:
        raise IdxParseError(f"{path}: bad magic {magic}, expected {expected_magic}")
    dims = struct.unpack_from(f">{n_dims}i", data, 4)
    return dims, need


def load_mnist_idx(images_path, labels_path) -> MnistDataset:
    """Load an IDX image/label file pair.

    Raises
    ------
    IdxParseError
        On a bad magic number, a truncated payload, or a sample-count
        mismatch between the two files; each case names the offending file.
    """
    images_path = Path(images_path)
    labels_path = Path(labels_path)
    img_bytes = images_path.read_bytes()
    (n_img, rows, cols), off = _read_header(img_bytes, images_path, IMAGES_MAGIC, 3)
    expected = n_img * rows * cols
    payload = img_bytes[off:]
    if len(payload) != expected:
        raise IdxParseError(
            f"{images_path}: payload has {len(payload)} bytes, expected {expected}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(n_img, rows * cols)
    images = pixels.T.astype(np.float64) / 255.0

    lbl_bytes = labels_path.read_bytes()
    (n_lbl,), off = _read_header(lbl_bytes, labels_path, LABELS_MAGIC, 1)
    payload = lbl_bytes[off:]
    if len(payload) != n_lbl:
        raise IdxParseError(f"{labels_path}: payload has {len(payload)} bytes, expected {n_lbl}")
    if n_lbl != n_img:
        raise IdxParseError(
            f"sample counts differ: {images_path} has {n_img}, {labels_path} has {n_lbl}"
        )
    raw = np.frombuffer(payload, dtype=np.uint8)
    if raw.size and raw.max() >= NUM_CLASSES:
        raise IdxParseError(f"{labels_path}: label {raw.max()} out of range 0..{NUM_CLASSES - 1}")
    labels = np.zeros((NUM_CLASSES, n_lbl), dtype=np.float64)
    labels[raw, np.arange(n_lbl)] = 1.0
    return MnistDataset(images=images, labels=labels)


def one_hot(indices, num_classes: int = NUM_CLASSES) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros((num_classes, indices.size), dtype=np.float64)
    out[indices, np.arange(indices.size)] = 1.0
    return out


def synthetic_classification(
    d_features: int,
    n: int,
    seed,
    num_classes: int = NUM_CLASSES,
    noise: float = 0.25,
    label_flip: float = 0.1,
) -> MnistDataset:
    """Cluster-structured stand-in for image classification data.

    One random center per class in [0, 1]^d; samples are Gaussian scatter
    around their center, clipped back to the pixel range. ``label_flip``
    reassigns that fraction of labels uniformly, which puts an irreducible
    floor under the training loss so that convergence-speed comparisons are
    made at meaningful loss levels rather than in the saturated regime.
    """
    rng = as_rng(seed)
    centers = rng.uniform(0.0, 1.0, size=(d_features, num_classes))
    assignments = rng.integers(0, num_classes, size=n)
    images = np.clip(
        centers[:, assignments] + noise * rng.standard_normal((d_features, n)), 0.0, 1.0
    )
    if label_flip > 0:
        flips = rng.uniform(size=n) < label_flip
        assignments = assignments.copy()
        assignments[flips] = rng.integers(0, num_classes, size=int(flips.sum()))
    return MnistDataset(images=images, labels=one_hot(assignments, num_classes))
