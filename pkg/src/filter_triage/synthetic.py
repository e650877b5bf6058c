"""Procedural CIFAR-shaped image data.

Generates seeded 32x32 RGB class-pattern images and writes them either in
the canonical CIFAR-10 binary batch layout or in the internal dataset
format.  Each class couples two redundant cues: an oriented mid/high
frequency grating (fragile under blur and heavy noise) and a colored soft
blob (a low-frequency cue that survives blur).  Classifiers trained on the
clean distribution degrade visibly under distortion yet remain adaptable,
which is what the fine-tuning pipeline needs from its data.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import InputError

_TINTS = np.array([
    [1.0, -0.4, -0.4], [-0.4, 1.0, -0.4], [-0.4, -0.4, 1.0],
    [0.9, 0.9, -0.5], [0.9, -0.5, 0.9], [-0.5, 0.9, 0.9],
    [1.0, 0.3, -0.8], [-0.8, 1.0, 0.3], [0.3, -0.8, 1.0],
    [0.7, 0.7, 0.7],
])


def make_images(labels: np.ndarray, rng: np.random.Generator,
                class_count: int = 10) -> np.ndarray:
    """Render one image per label; fully vectorized over the batch."""
    labels = np.asarray(labels)
    n = len(labels)
    yy, xx = np.meshgrid(np.arange(32, dtype=np.float64),
                         np.arange(32, dtype=np.float64), indexing="ij")

    # smooth random background per channel: 4x4 field, bilinear to 32x32
    coarse = rng.uniform(60.0, 190.0, size=(n, 3, 4, 4))
    t = np.linspace(0, 3, 32)
    i0 = np.clip(np.floor(t).astype(int), 0, 2)
    frac = (t - i0)[None, None, :]
    rows = coarse[:, :, i0, :] * (1 - frac[..., None]) + coarse[:, :, i0 + 1, :] * frac[..., None]
    bg = rows[:, :, :, i0] * (1 - frac[:, :, None, :]) + rows[:, :, :, i0 + 1] * frac[:, :, None, :]

    # class-oriented grating, shared across channels with mild gain jitter
    theta = (labels % class_count) * (np.pi / class_count)
    freq = rng.uniform(3.0, 6.0, size=n)
    phase = rng.uniform(0.0, 2 * np.pi, size=n)
    amp = rng.uniform(25.0, 50.0, size=n)
    proj = (np.cos(theta)[:, None, None] * xx[None] + np.sin(theta)[:, None, None] * yy[None])
    grating = amp[:, None, None] * np.cos(2 * np.pi * freq[:, None, None] * proj / 32.0
                                          + phase[:, None, None])
    gain = rng.uniform(0.8, 1.2, size=(n, 3))
    grating = gain[:, :, None, None] * grating[:, None, :, :]

    # class-tinted soft blob: a low-frequency cue
    tints = _TINTS[labels % class_count]
    cx = rng.uniform(8.0, 24.0, size=n)
    cy = rng.uniform(8.0, 24.0, size=n)
    radius = rng.uniform(4.0, 8.0, size=n)
    blob_amp = rng.uniform(30.0, 50.0, size=n)
    d2 = (xx[None] - cx[:, None, None]) ** 2 + (yy[None] - cy[:, None, None]) ** 2
    blob = np.exp(-d2 / (2.0 * radius[:, None, None] ** 2)) * blob_amp[:, None, None]
    blob = tints[:, :, None, None] * blob[:, None, :, :]

    img = bg + grating + blob + rng.normal(0.0, 5.0, size=(n, 3, 32, 32))
    return np.clip(img, 0, 255).astype(np.uint8)


def _balanced_labels(count: int, class_count: int, rng: np.random.Generator) -> np.ndarray:
    if count % class_count != 0:
        raise InputError(f"count {count} is not divisible by {class_count} classes")
    labels = np.repeat(np.arange(class_count), count // class_count)
    return labels[rng.permutation(count)]


def generate_dataset(count: int, split: str, seed: int,
                     class_count: int = 10, chunk: int = 2000) -> Dataset:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0 if split == "train" else 1]))
    labels = _balanced_labels(count, class_count, rng)
    images = np.empty((count, 3, 32, 32), dtype=np.uint8)
    for start in range(0, count, chunk):
        images[start:start + chunk] = make_images(labels[start:start + chunk], rng, class_count)
    return Dataset(images, labels.astype(np.int64), class_count, split,
                   {"source": f"synthetic:{split}", "seed": seed})


def write_cifar10_layout(out_dir: str | Path, seed: int = 7) -> None:
    """Write synthetic data as canonical CIFAR-10 binary batches (50k + 10k)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train = generate_dataset(50000, "train", seed)
    test = generate_dataset(10000, "test", seed)
    for i in range(5):
        _write_batch(out / f"data_batch_{i + 1}.bin",
                     train.images[i * 10000:(i + 1) * 10000],
                     train.labels[i * 10000:(i + 1) * 10000])
    _write_batch(out / "test_batch.bin", test.images, test.labels)


def _write_batch(path: Path, images: np.ndarray, labels: np.ndarray) -> None:
    n = len(labels)
    recs = np.empty((n, 3073), dtype=np.uint8)
    recs[:, 0] = labels
    recs[:, 1:] = images.reshape(n, -1)
    path.write_bytes(recs.tobytes())
