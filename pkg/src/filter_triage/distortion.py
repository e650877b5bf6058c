"""Image distortions: additive white Gaussian noise and Gaussian blur.

Distortion is applied in the [0, 255] pixel domain, before any network
normalization, and results are clamped back to [0, 255].  All randomness is
derived from (seed, image index) so a dataset distorts to the same pixels
regardless of iteration order or batching.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import InputError

AWGN_PRESETS = (5.0, 15.0, 25.0)
BLUR_PRESETS = (0.25, 1.25, 2.25)


@dataclass(frozen=True)
class DistortionSpec:
    kind: str                # "awgn" | "blur" | "identity"
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("awgn", "blur", "identity"):
            raise InputError(f"unknown distortion kind {self.kind!r}")
        if self.sigma < 0:
            raise InputError("sigma must be >= 0")

    def tag(self) -> str:
        if self.kind == "identity":
            return "identity"
        return f"{self.kind}-{self.sigma:g}"


def awgn(image: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Add zero-mean Gaussian noise with std ``sigma`` per value, clamp to [0,255]."""
    if sigma < 0:
        raise InputError("sigma must be >= 0")
    x = image.astype(np.float32)
    if sigma == 0:
        return x.copy()
    noisy = x + rng.normal(0.0, sigma, size=x.shape).astype(np.float32)
    return np.clip(noisy, 0.0, 255.0)


def make_blur_kernel(sigma: float) -> np.ndarray:
    """1-d Gaussian kernel of size round(4*sigma), forced odd, minimum 1.

    Entries are exp(-x^2 / 2 sigma^2) at integer offsets, normalized to sum 1.
    """
    if sigma < 0:
        raise InputError("sigma must be >= 0")
    size = int(round(4.0 * sigma))
    if size % 2 == 0:
        size += 1
    size = max(size, 1)
    if size == 1 or sigma == 0:
        return np.array([1.0])
    half = size // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _correlate_1d(x: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """Reflect-padded 1-d correlation along ``axis`` (kernel is symmetric)."""
    half = len(kernel) // 2
    if half == 0:
        return x * kernel[0]
    pad = [(0, 0)] * x.ndim
    pad[axis] = (half, half)
    xp = np.pad(x, pad, mode="reflect")
    out = np.zeros_like(x, dtype=np.float64)
    for t, w in enumerate(kernel):
        sl = [slice(None)] * x.ndim
        sl[axis] = slice(t, t + x.shape[axis])
        out += w * xp[tuple(sl)]
    return out


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur per channel of a [3,H,W] image; clamped."""
    kernel = make_blur_kernel(sigma)
    x = image.astype(np.float64)
    if len(kernel) == 1:
        return x.astype(np.float32)
    x = _correlate_1d(x, kernel, axis=x.ndim - 1)   # horizontal
    x = _correlate_1d(x, kernel, axis=x.ndim - 2)   # vertical
    return np.clip(x, 0.0, 255.0).astype(np.float32)


def distort_image(image: np.ndarray, spec: DistortionSpec, index: int) -> np.ndarray:
    if spec.kind == "identity":
        return image.astype(np.float32)
    if spec.kind == "blur":
        return gaussian_blur(image, spec.sigma)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, index])))
    return awgn(image, spec.sigma, rng)


def distort_dataset(dataset: Dataset, spec: DistortionSpec,
                    indices: np.ndarray | None = None) -> Dataset:
    """Distort every image (or the given indices) with index-stable seeding.

    Per-image RNG streams are derived from (spec.seed, original index), so a
    permuted or subset input produces pixel-identical outputs per image.
    """
    if indices is None:
        indices = np.arange(len(dataset))
    indices = np.asarray(indices)
    if spec.kind == "identity":
        images = dataset.images[indices].copy()
    else:
        images = np.empty((len(indices), *dataset.images.shape[1:]), dtype=np.float32)
        for row, idx in enumerate(indices):
            images[row] = distort_image(dataset.images[idx], spec, int(idx))
    prov = dict(dataset.provenance)
    prov["distortion"] = {"kind": spec.kind, "sigma": spec.sigma, "seed": spec.seed}
    return Dataset(images, dataset.labels[indices].copy(), dataset.class_count,
                   dataset.split, prov)
