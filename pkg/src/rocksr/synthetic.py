"""Synthetic grainy test images and ready-made toy corpora.

Real micro-CT slices are two-phase media: sharp grain boundaries over
smooth intensity ramps with mild banded texture.  The generator mimics
that structure with thresholded low-frequency cosine fields (grains),
a gentle illumination gradient, and band-limited texture whose period
survives moderate downsampling.  Crucially there is no white noise: the
content is locally inferable from a downsampled copy, so a small
network can genuinely out-reconstruct plain interpolation on it.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataset import DatasetManifest, prepare_corpus
from .images import GrayImage, quantize, save_image
from .rng import derive_rng


def _cosine_field(size: int, rng: np.random.Generator, n_waves: int,
                  min_freq: float, max_freq: float) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    field = np.zeros((size, size), dtype=np.float64)
    for _ in range(n_waves):
        freq = rng.uniform(min_freq, max_freq) / size
        angle = rng.uniform(0, 2 * np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        ky, kx = np.sin(angle) * freq, np.cos(angle) * freq
        field += rng.uniform(0.5, 1.0) * np.cos(2 * np.pi * (ky * yy + kx * xx) + phase)
    return field


def textured_rock_image(size: int, seed: int) -> np.ndarray:
    """A (size, size) float32 image in [-1, 1] with grain-like structure."""
    rng = np.random.default_rng(seed)
    grains = _cosine_field(size, rng, n_waves=6, min_freq=1.5, max_freq=5.0)
    phase_a = grains > 0  # matrix vs pore phase
    base = np.where(phase_a, 0.45, -0.55)
    ramp = _cosine_field(size, rng, n_waves=2, min_freq=0.5, max_freq=1.0) * 0.1
    texture = _cosine_field(size, rng, n_waves=4, min_freq=size / 16, max_freq=size / 9)
    img = base + ramp + 0.08 * texture * np.where(phase_a, 1.0, 0.4)
    return np.clip(img, -1.0, 1.0).astype(np.float32)


def make_toy_corpus(out_dir, n_images: int, size: int, scale: int, seed: int,
                    classes=("sandstone", "carbonate"), bit_depth: int = 8) -> DatasetManifest:
    """Generate textured images and run the standard corpus preparation.

    Images are quantized to PNG first so the pipeline sees exactly what a
    real corpus would: decode, crop, degrade, split.
    """
    out_dir = Path(out_dir)
    src_dir = out_dir / "src"
    src_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n_images):
        pixels = textured_rock_image(size, seed=int(derive_rng(seed, "image", i).integers(2 ** 31)))
        cls = classes[i % len(classes)]
        path = src_dir / f"{cls}_{i:04d}.png"
        img = GrayImage(pixels, source_bit_depth=bit_depth)
        # exact quantized content: re-normalize what the PNG will hold
        img = GrayImage(
            2.0 * quantize(pixels, bit_depth) / ((1 << bit_depth) - 1) - 1.0,
            source_bit_depth=bit_depth,
        )
        save_image(img, path)
        paths.append(path)
    manifest, _ = prepare_corpus(paths, out_dir, scale=scale, seed=seed)
    return manifest
