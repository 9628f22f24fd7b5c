"""Synthetic desk-scale classification data.

Each class is a fixed prototype image (class-specific mean intensity plus
a seeded low-frequency cosine template) observed under additive Gaussian
pixel noise of standard deviation 0.1, clipped to the unit range. The
prototypes depend only on (seed, class), so different splits drawn from
the same seed describe the same classification problem.
"""

from __future__ import annotations

import numpy as np

from .images import Dataset, Image, Sample
from .rng import RngKey

__all__ = ["generate_synthetic_dataset", "class_prototype", "NOISE_SIGMA"]

NOISE_SIGMA = 0.1
_TEMPLATE_WAVES = 2
_TEMPLATE_AMPLITUDE = 0.12


def class_prototype(key: RngKey, k: int, num_classes: int,
                    shape: tuple[int, int, int]) -> np.ndarray:
    """Deterministic prototype for class k: mean intensity + spatial waves."""
    h, w, c = shape
    # Means spread over [0.15, 0.85] so sigma-0.1 noise rarely saturates.
    mean = 0.15 + 0.7 * k / max(num_classes - 1, 1)
    gen = key.child("prototype", k).generator()
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    proto = np.full((h, w, c), mean, dtype=np.float64)
    for ch in range(c):
        for _ in range(_TEMPLATE_WAVES):
            fy, fx = gen.integers(0, 3, size=2)
            phase = gen.uniform(0.0, 2.0 * np.pi)
            wave = np.cos(2.0 * np.pi * (fy * ys / h + fx * xs / w) + phase)
            proto[:, :, ch] += _TEMPLATE_AMPLITUDE * wave
    return np.clip(proto, 0.05, 0.95)


def generate_synthetic_dataset(seed: int, num_classes: int, n_per_class: int,
                               shape: tuple[int, int, int],
                               split_tag: str = "train") -> Dataset:
    """Build `num_classes * n_per_class` samples, deterministic in all args."""
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    if n_per_class < 1:
        raise ValueError(f"need at least 1 sample per class, got {n_per_class}")
    h, w, c = shape
    if h < 1 or w < 1 or c < 1 or h * w * c < 4:
        raise ValueError(f"shape {shape} too small, need H*W*C >= 4")

    key = RngKey(seed)
    samples = []
    for k in range(num_classes):
        proto = class_prototype(key, k, num_classes, shape)
        for i in range(n_per_class):
            gen = key.child("noise", split_tag, k, i).generator()
            noisy = proto + gen.normal(0.0, NOISE_SIGMA, size=(h, w, c))
            pixels = np.clip(noisy, 0.0, 1.0)
            samples.append(
                Sample(
                    sample_id=f"{split_tag}-{k:02d}-{i:04d}",
                    image=Image(pixels),
                    true_label=k,
                )
            )
    return Dataset(num_classes=num_classes, split_tag=split_tag, samples=samples)
