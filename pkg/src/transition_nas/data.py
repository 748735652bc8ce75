"""Desk-scale datasets: a seeded synthetic generator and a CIFAR-10 binary reader.

Both produce per-channel normalized float64 image tensors.  The synthetic
generator builds one fixed template per class (a seeded random field plus
a class-specific channel shift) and adds Gaussian pixel noise, which keeps
the "easy" preset trivially separable by a nearest-template classifier.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Dataset",
    "Batch",
    "SyntheticSpec",
    "CifarFormatError",
    "easy_spec",
    "gen_synthetic",
    "normalize_per_channel",
    "read_cifar10_binary",
    "batches",
]

CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes


class CifarFormatError(ValueError):
    """The bytes on disk do not follow the CIFAR-10 binary layout."""


@dataclass
class Dataset:
    """Images [N, C, H, W] (float64, normalized) with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    class_count: int

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.class_count)


@dataclass
class Batch:
    images: np.ndarray
    labels: np.ndarray


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic classification set."""

    class_count: int = 4
    samples_per_class: int = 32
    height: int = 16
    width: int = 16
    channels: int = 3
    contrast: float = 1.0
    noise_std: float = 0.1
    seed: int = 0


def easy_spec(seed: int = 0, samples_per_class: int = 32) -> SyntheticSpec:
    """The separable preset: template contrast well above the pixel noise."""
    return SyntheticSpec(
        class_count=4,
        samples_per_class=samples_per_class,
        contrast=1.0,
        noise_std=0.1,
        seed=seed,
    )


def class_templates(spec: SyntheticSpec) -> np.ndarray:
    """The fixed per-class templates, shape [classes, C, H, W]."""
    rng = np.random.default_rng(spec.seed)
    shape = (spec.class_count, spec.channels, spec.height, spec.width)
    fields = spec.contrast * rng.standard_normal(shape)
    # class-specific channel shift keeps classes apart even after spatial pooling
    shifts = spec.contrast * rng.standard_normal((spec.class_count, spec.channels))
    return fields + shifts[:, :, None, None]


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic synthetic dataset: template per class plus Gaussian noise."""
    templates = class_templates(spec)
    rng = np.random.default_rng((spec.seed, 1))
    n = spec.class_count * spec.samples_per_class
    images = np.empty((n, spec.channels, spec.height, spec.width))
    labels = np.empty(n, dtype=np.int64)
    row = 0
    for c in range(spec.class_count):
        for _ in range(spec.samples_per_class):
            noise = spec.noise_std * rng.standard_normal(templates[c].shape)
            images[row] = templates[c] + noise
            labels[row] = c
            row += 1
    return Dataset(normalize_per_channel(images), labels, spec.class_count)


def normalize_per_channel(images: np.ndarray) -> np.ndarray:
    """Shift/scale each channel to mean 0 and unit variance over the set."""
    mean = images.mean(axis=(0, 2, 3), keepdims=True)
    std = images.std(axis=(0, 2, 3), keepdims=True)
    std = np.maximum(std, 1e-12)
    return (images - mean) / std


def read_cifar10_binary(paths) -> Dataset:
    """Read CIFAR-10 binary batch files (3073-byte records) into a Dataset.

    Pixels are scaled to [0, 1] and then per-channel normalized over the
    loaded set.
    """
    chunks = []
    label_chunks = []
    for path in paths:
        size = os.path.getsize(path)
        if size == 0 or size % CIFAR_RECORD_BYTES != 0:
            raise CifarFormatError(
                f"{path}: size {size} is not a positive multiple of {CIFAR_RECORD_BYTES}"
            )
        raw = np.fromfile(path, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        labels = raw[:, 0]
        bad = np.nonzero(labels > 9)[0]
        if bad.size:
            raise CifarFormatError(
                f"{path}: record {int(bad[0])} has label byte {int(labels[bad[0]])} > 9"
            )
        chunks.append(raw[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0)
        label_chunks.append(labels.astype(np.int64))
    if not chunks:
        raise CifarFormatError("no input files given")
    images = np.concatenate(chunks, axis=0)
    labels = np.concatenate(label_chunks, axis=0)
    return Dataset(normalize_per_channel(images), labels, 10)


def batches(dataset: Dataset, batch_size: int, seed: int, epoch: int) -> list[Batch]:
    """Seeded per-epoch shuffle into batches; the last short batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(dataset)
    perm = np.random.default_rng((seed, epoch)).permutation(n)
    out = []
    for start in range(0, n, batch_size):
        idx = perm[start : start + batch_size]
        out.append(Batch(dataset.images[idx], dataset.labels[idx]))
    return out
