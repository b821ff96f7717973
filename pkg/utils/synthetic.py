"""Seeded two-class texture set: class 0 horizontal stripes, class 1 vertical stripes."""
import numpy as np

from utils.dataset import DatasetIndex


def stripe_image(rng: np.random.Generator, size: int, label: int, channels: int = 3,
                 noise: float = 0.1) -> np.ndarray:
    period = rng.uniform(4.0, 8.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    contrast = rng.uniform(0.25, 0.45)
    coordinate = np.arange(size, dtype=np.float64)
    wave = 0.5 + contrast * np.sin(2.0 * np.pi * coordinate / period + phase)
    pattern = np.tile(wave[:, None], (1, size)) if label == 0 else np.tile(wave[None, :], (size, 1))
    tint = rng.uniform(0.8, 1.0, size=channels)
    image = pattern[:, :, None] * tint + rng.normal(0.0, noise, size=(size, size, channels))
    return np.clip(image, 0.0, 1.0)


def make_stripes(n_samples: int, size: int = 32, seed: int = 0, channels: int = 3,
                 noise: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Balanced labels in shuffled order; returns (images N x S x S x ch float32, labels N float32)."""
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n_samples) % 2)
    images = np.stack([stripe_image(rng, size, int(label), channels, noise) for label in labels])
    return images.astype(np.float32), labels.astype(np.float32)


def stripes_dataset(n_samples: int, size: int = 32, seed: int = 0, channels: int = 3) -> DatasetIndex:
    images, labels = make_stripes(n_samples, size, seed, channels)
    return DatasetIndex(images, labels.astype(np.int64), 2, [f"stripes#{i}" for i in range(n_samples)])
