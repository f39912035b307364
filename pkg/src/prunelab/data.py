"""Datasets: the classic 3073-byte image records plus a synthetic fallback.

The binary image format is a flat sequence of fixed-size records, one image
each: a single label byte (0..9) followed by 3072 pixel bytes laid out as
three 32x32 channel planes.  Files whose size is not a whole number of
records are rejected outright rather than truncated.

The synthetic set draws one Gaussian template per class and perturbs it with
noise, giving a small CNN something learnable in a few hundred iterations.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import FormatError

RECORD_BYTES = 3073
IMAGE_SHAPE = (3, 32, 32)
N_CLASSES = 10


def load_records_raw(path: str) -> tuple[np.ndarray, np.ndarray]:
    """Parse records as stored: uint8 labels (N,) and pixels (N, 3, 32, 32)."""
    size = os.path.getsize(path)
    if size == 0 or size % RECORD_BYTES != 0:
        raise FormatError(
            f"{path}: {size} bytes is not a multiple of the {RECORD_BYTES}-byte record size"
        )
    with open(path, "rb") as fh:
        raw = np.frombuffer(fh.read(), dtype=np.uint8)
    records = raw.reshape(-1, RECORD_BYTES)
    labels = records[:, 0].copy()
    if labels.max() >= N_CLASSES:
        raise FormatError(f"{path}: label {int(labels.max())} out of range 0..{N_CLASSES - 1}")
    pixels = records[:, 1:].reshape(-1, *IMAGE_SHAPE).copy()
    return labels, pixels


def save_records(path: str, labels: np.ndarray, pixels: np.ndarray) -> None:
    """Inverse of load_records_raw; round-trips byte for byte."""
    if labels.dtype != np.uint8 or pixels.dtype != np.uint8:
        raise FormatError("records store uint8 labels and pixels")
    if pixels.shape[1:] != IMAGE_SHAPE or len(labels) != len(pixels):
        raise FormatError(f"expected pixels (N, 3, 32, 32) with matching labels, "
                          f"got {pixels.shape} and {labels.shape}")
    records = np.empty((len(labels), RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = labels
    records[:, 1:] = pixels.reshape(len(labels), -1)
    with open(path, "wb") as fh:
        fh.write(records.tobytes())


def load_records(path: str, center: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Records as training data: float32 images scaled to [0, 1].

    `path` may be one batch file or a directory of them (files sorted by
    name, concatenated).  With `center`, the per-channel mean of the loaded
    set is subtracted.
    """
    if os.path.isdir(path):
        files = sorted(
            os.path.join(path, f) for f in os.listdir(path)
            if f.endswith(".bin")
        )
        if not files:
            raise FormatError(f"{path}: no .bin record files in directory")
        parts = [load_records_raw(f) for f in files]
        labels = np.concatenate([p[0] for p in parts])
        pixels = np.concatenate([p[1] for p in parts])
    else:
        labels, pixels = load_records_raw(path)
    x = pixels.astype(np.float32) / 255.0
    if center:
        x -= x.mean(axis=(0, 2, 3), keepdims=True)
    return x, labels.astype(np.int64)


def make_synthetic(
    n_per_class: int,
    n_classes: int = 4,
    shape: tuple[int, int, int] = (1, 8, 8),
    noise: float = 0.6,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Class templates plus Gaussian noise; balanced, shuffled, seeded."""
    rng = np.random.default_rng(seed)
    templates = rng.normal(0.0, 1.0, size=(n_classes, *shape))
    xs, ys = [], []
    for c in range(n_classes):
        samples = templates[c] + noise * rng.normal(0.0, 1.0, size=(n_per_class, *shape))
        xs.append(samples)
        ys.append(np.full(n_per_class, c, dtype=np.int64))
    x = np.concatenate(xs).astype(np.float32)
    y = np.concatenate(ys)
    order = rng.permutation(len(y))
    return x[order], y[order]


class BatchStream:
    """Endless minibatches with a deterministic reshuffle every epoch."""

    def __init__(self, x: np.ndarray, y: np.ndarray, batch_size: int, seed: int):
        if len(x) != len(y) or len(x) == 0:
            raise FormatError(f"bad dataset: {len(x)} inputs, {len(y)} labels")
        self.x = x
        self.y = y
        self.batch_size = min(batch_size, len(x))
        self._rng = np.random.default_rng(seed)
        self._order = self._rng.permutation(len(x))
        self._pos = 0

    def next_batch(self) -> tuple[np.ndarray, np.ndarray]:
        if self._pos + self.batch_size > len(self.x):
            self._order = self._rng.permutation(len(self.x))
            self._pos = 0
        idx = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return self.x[idx], self.y[idx]
