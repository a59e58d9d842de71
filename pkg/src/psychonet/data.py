"""CIFAR-10 binary ingestion, a synthetic dataset in the same format, and augmentation.

Each record of a CIFAR-10 batch file is 3,073 bytes: one label byte followed by
1,024 red, 1,024 green and 1,024 blue pixel bytes in row-major order.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

RECORD_BYTES = 3073
IMAGE_SHAPE = (3, 32, 32)
N_CLASSES = 10
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILES = ("test_batch.bin",)
ENV_DIR = "PSYCHONET_CIFAR10_DIR"
AUG_PAD = 4


class DatasetError(ValueError):
    """Corrupt or missing dataset files."""


@dataclass
class Dataset:
    images: np.ndarray  # (N, 3, 32, 32) float32, standardized
    labels: np.ndarray  # (N,) int64
    split: str
    mean: np.ndarray  # per-channel statistics used for standardization (on [0,1] pixels)
    std: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, n: Optional[int]) -> "Dataset":
        """The first ``n`` records (a fixed, reproducible subset)."""
        if n is None or n >= len(self):
            return self
        return replace(self, images=self.images[:n], labels=self.labels[:n])

    @property
    def fill(self) -> np.ndarray:
        """Standardized value of a black pixel, per channel (used for padding)."""
        return (-self.mean / self.std).astype(np.float32)


def read_batch(path) -> Tuple[np.ndarray, np.ndarray]:
    """Decode one batch file into uint8 images (N, 3, 32, 32) and int64 labels."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % RECORD_BYTES:
        raise DatasetError(f"{path}: size {raw.size} is not a multiple of {RECORD_BYTES} bytes (corrupt file)")
    rec = raw.reshape(-1, RECORD_BYTES)
    labels = rec[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= N_CLASSES)
    if bad.size:
        raise DatasetError(f"{path}: record {bad[0]} has label {labels[bad[0]]} > {N_CLASSES - 1}")
    return rec[:, 1:].reshape(-1, *IMAGE_SHAPE), labels


def resolve_dir(directory=None) -> Path:
    """Dataset directory: explicit argument, else the ``PSYCHONET_CIFAR10_DIR`` environment variable.

    A ``cifar-10-batches-bin`` sub-directory is used if present.
    """
    directory = directory or os.environ.get(ENV_DIR)
    if not directory:
        raise DatasetError(f"no CIFAR-10 directory given (pass one or set {ENV_DIR})")
    path = Path(directory)
    if (path / "cifar-10-batches-bin").is_dir():
        path = path / "cifar-10-batches-bin"
    missing = [f for f in TRAIN_FILES + TEST_FILES if not (path / f).is_file()]
    if missing:
        raise DatasetError(f"{path}: missing batch files {missing}")
    return path


def channel_stats(images_u8: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std of [0, 1] pixels; a constant channel gets std 1 (it standardizes to 0)."""
    x = images_u8.astype(np.float64) / 255.0
    std = x.std(axis=(0, 2, 3))
    return x.mean(axis=(0, 2, 3)), np.where(std > 0, std, 1.0)


def standardize(images_u8: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    x = images_u8.astype(np.float64) / 255.0
    return ((x - mean[None, :, None, None]) / std[None, :, None, None]).astype(np.float32)


def load_cifar10(directory=None) -> Tuple[Dataset, Dataset]:
    """Load the train and test splits, standardized with statistics of the training split."""
    path = resolve_dir(directory)
    parts = [read_batch(path / f) for f in TRAIN_FILES]
    train_x = np.concatenate([p[0] for p in parts])
    train_y = np.concatenate([p[1] for p in parts])
    test_x, test_y = read_batch(path / TEST_FILES[0])
    mean, std = channel_stats(train_x)
    return (Dataset(standardize(train_x, mean, std), train_y, "train", mean, std),
            Dataset(standardize(test_x, mean, std), test_y, "test", mean, std))


def load_split_subsets(directory=None, n_train: Optional[int] = None, n_test: Optional[int] = None):
    train, test = load_cifar10(directory)
    return train.subset(n_train), test.subset(n_test)


# ---------------------------------------------------------------------------
# synthetic data in the CIFAR-10 binary layout
# ---------------------------------------------------------------------------

def synthetic_images(n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Class-dependent oriented gratings plus noise, as uint8 images.

    Class ``k`` uses orientation ``k * pi / 10`` and a class-specific colour
    balance, so the task is learnable but not trivial.
    """
    labels = rng.integers(0, N_CLASSES, size=n)
    yy, xx = np.mgrid[0:32, 0:32].astype(np.float64)
    theta = labels * np.pi / N_CLASSES
    freq = 0.25 + 0.05 * (labels % 3)
    phase = rng.uniform(0, 2 * np.pi, size=n)
    proj = np.cos(theta)[:, None, None] * xx + np.sin(theta)[:, None, None] * yy
    wave = np.sin(freq[:, None, None] * proj + phase[:, None, None])
    colour = 0.5 + 0.4 * np.stack([np.cos(labels), np.sin(labels), np.cos(2 * labels)], axis=1)
    img = 0.5 + 0.35 * wave[:, None] * colour[:, :, None, None]
    img += rng.normal(0, 0.08, size=img.shape)
    return np.clip(np.round(img * 255), 0, 255).astype(np.uint8), labels.astype(np.int64)


def encode_records(images_u8: np.ndarray, labels: np.ndarray) -> bytes:
    rec = np.empty((len(labels), RECORD_BYTES), dtype=np.uint8)
    rec[:, 0] = labels
    rec[:, 1:] = images_u8.reshape(len(labels), -1)
    return rec.tobytes()


def write_synthetic_cifar10(directory, per_file: int = 1000, n_test: int = 1000, seed: int = 0) -> Path:
    """Write a CIFAR-10-format dataset of synthetic images (5 train files + 1 test file)."""
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for name in TRAIN_FILES:
        (path / name).write_bytes(encode_records(*synthetic_images(per_file, rng)))
    (path / TEST_FILES[0]).write_bytes(encode_records(*synthetic_images(n_test, rng)))
    return path


# ---------------------------------------------------------------------------
# augmentation and batching
# ---------------------------------------------------------------------------

def augment(batch: np.ndarray, rng: np.random.Generator, fill=0.0, offsets: Optional[np.ndarray] = None,
            flips: Optional[np.ndarray] = None) -> np.ndarray:
    """Random 32x32 crop from a 4-pixel padded image and horizontal flip with p = 0.5.

    ``offsets`` (N, 2) in ``[0, 8]`` and boolean ``flips`` (N,) may be given
    explicitly; otherwise they are drawn from ``rng`` (offsets first).
    """
    n, c, h, w = batch.shape
    if offsets is None:
        offsets = rng.integers(0, 2 * AUG_PAD + 1, size=(n, 2))
    if flips is None:
        flips = rng.random(n) < 0.5
    fill = np.broadcast_to(np.asarray(fill, dtype=batch.dtype), (c,))
    padded = np.empty((n, c, h + 2 * AUG_PAD, w + 2 * AUG_PAD), dtype=batch.dtype)
    padded[...] = fill[None, :, None, None]
    padded[:, :, AUG_PAD:AUG_PAD + h, AUG_PAD:AUG_PAD + w] = batch
    out = np.empty_like(batch)
    for i, (dy, dx) in enumerate(offsets):
        crop = padded[i, :, dy:dy + h, dx:dx + w]
        out[i] = crop[:, :, ::-1] if flips[i] else crop
    return out


def batch_indices(n: int, batch_size: int, rng: Optional[np.random.Generator] = None, min_size: int = 2) -> list:
    """Index arrays for one epoch; shuffled when ``rng`` is given.

    A trailing batch smaller than ``min_size`` is dropped (batch norm needs
    at least two samples in training).
    """
    order = rng.permutation(n) if rng is not None else np.arange(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    return [b for b in batches if len(b) >= min_size]
