"""Separable image resampling with selectable kernels, blur, and noise.

Geometry follows the half-pixel-center convention: output pixel j samples
the input at u = (j + 0.5) * (n_in / n_out) - 0.5.  When an axis shrinks,
the kernel is stretched by the scale factor (antialiasing), so e.g. the
box kernel at scale 4 averages exactly the 4 source pixels under each
output pixel.  Near the borders, weights falling outside the image are
dropped and the remaining taps renormalized to unit sum; constants are
therefore preserved everywhere, including corners.

Weights are built in float64 as one dense matrix per axis and applied as
two matrix products.  Matrices are cached per (n_in, n_out, kernel,
antialias), which makes repeated downsampling of a large corpus cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DataError
from .images import GrayImage

KERNEL_KINDS = ("box", "triangle", "bicubic", "lanczos2", "lanczos3")
# kernels the corpus pipeline samples from when degrading; bicubic is
# reserved for the upsampling baseline
DEGRADATION_KERNELS = ("box", "triangle", "lanczos2", "lanczos3")

_RADII = {"box": 0.5, "triangle": 1.0, "bicubic": 2.0, "lanczos2": 2.0, "lanczos3": 3.0}


def _box(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    return np.where(ax < 0.5, 1.0, np.where(ax == 0.5, 0.5, 0.0))


def _triangle(x: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, 1.0 - np.abs(x))


def _bicubic(x: np.ndarray) -> np.ndarray:
    # Keys cubic with a = -0.5
    a = -0.5
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    inner = (a + 2) * ax3 - (a + 3) * ax2 + 1
    outer = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, inner, np.where(ax < 2, outer, 0.0))


def _lanczos(x: np.ndarray, radius: int) -> np.ndarray:
    ax = np.abs(x)
    out = np.zeros_like(ax)
    inside = (ax < radius) & (ax > 1e-12)
    xi = x[inside]
    vals = (radius * np.sin(np.pi * xi) * np.sin(np.pi * xi / radius)
            / (np.pi * np.pi * xi * xi))
    # sinc vanishes exactly at nonzero integers; float sin(pi*k) does not
    vals[np.abs(xi - np.round(xi)) < 1e-12] = 0.0
    out[inside] = vals
    out[ax <= 1e-12] = 1.0
    return out


_EVALUATORS = {
    "box": _box,
    "triangle": _triangle,
    "bicubic": _bicubic,
    "lanczos2": lambda x: _lanczos(x, 2),
    "lanczos3": lambda x: _lanczos(x, 3),
}


@dataclass(frozen=True)
class ResampleKernel:
    """A named interpolation kernel with finite support."""

    kind: str

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise DataError(f"unknown kernel '{self.kind}', expected one of {KERNEL_KINDS}")

    @property
    def support_radius(self) -> float:
        return _RADII[self.kind]

    def __call__(self, x) -> np.ndarray:
        return _EVALUATORS[self.kind](np.asarray(x, dtype=np.float64))


def pick_degradation_kernel(rng: np.random.Generator) -> ResampleKernel:
    """Uniform draw over the degradation kernel set."""
    return ResampleKernel(DEGRADATION_KERNELS[int(rng.integers(len(DEGRADATION_KERNELS)))])


@lru_cache(maxsize=256)
def _axis_matrix(n_in: int, n_out: int, kind: str, antialias: bool) -> np.ndarray:
    """(n_out, n_in) float64 weights for one axis; rows sum to exactly 1."""
    kernel = ResampleKernel(kind)
    scale = n_in / n_out
    widen = max(scale, 1.0) if antialias else 1.0
    radius = kernel.support_radius * widen
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    for j in range(n_out):
        u = (j + 0.5) * scale - 0.5
        lo = max(0, math.floor(u - radius))
        hi = min(n_in - 1, math.ceil(u + radius))
        taps = np.arange(lo, hi + 1)
        weights = kernel((u - taps) / widen)
        total = weights.sum()
        if total <= 0:  # pragma: no cover - radii guarantee in-bounds mass
            raise DataError(f"degenerate resampling row at output {j}")
        mat[j, lo : hi + 1] = weights / total
    return mat


def resize(pixels: np.ndarray, out_h: int, out_w: int, kernel: ResampleKernel,
           antialias: bool | None = None) -> np.ndarray:
    """Resample a (H, W) array to (out_h, out_w).

    antialias=None stretches the kernel on axes that shrink and leaves
    enlarging axes alone, which is what both corpus degradation and the
    interpolation baseline want.
    """
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise DataError(f"resize expects a 2-D array, got shape {pixels.shape}")
    h, w = pixels.shape
    if out_h < 1 or out_w < 1:
        raise DataError(f"resize target must be positive, got {(out_h, out_w)}")
    aa_h = (h > out_h) if antialias is None else antialias
    aa_w = (w > out_w) if antialias is None else antialias
    rows = _axis_matrix(h, out_h, kernel.kind, aa_h)
    cols = _axis_matrix(w, out_w, kernel.kind, aa_w)
    out = rows @ pixels.astype(np.float64) @ cols.T
    return out.astype(np.float32)


def downsample(image: GrayImage, scale: int, kernel: ResampleKernel) -> GrayImage:
    """Shrink by an integer factor with the antialiased kernel."""
    if scale < 1:
        raise DataError(f"downsample scale must be >= 1, got {scale}")
    h, w = image.pixels.shape
    if h % scale or w % scale:
        raise DataError(
            f"image size {h}x{w} is not divisible by scale {scale}; crop first"
        )
    out = resize(image.pixels, h // scale, w // scale, kernel, antialias=True)
    res = image.resolution_um * scale if image.resolution_um is not None else None
    return GrayImage(out, source_bit_depth=image.source_bit_depth, resolution_um=res)


def upsample_bicubic(pixels: np.ndarray, scale: int) -> np.ndarray:
    """The non-learned baseline: plain bicubic enlargement."""
    h, w = pixels.shape
    return resize(pixels, h * scale, w * scale, ResampleKernel("bicubic"), antialias=False)


@lru_cache(maxsize=64)
def _blur_matrix(n: int, sigma: float) -> np.ndarray:
    """1-D Gaussian weights, truncated at ceil(3*sigma), edge-renormalized."""
    r = math.ceil(3 * sigma)
    offsets = np.arange(-r, r + 1, dtype=np.float64)
    profile = np.exp(-(offsets ** 2) / (2 * sigma * sigma))
    mat = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        lo = max(0, i - r)
        hi = min(n - 1, i + r)
        seg = profile[lo - i + r : hi - i + r + 1]
        mat[i, lo : hi + 1] = seg / seg.sum()
    return mat


def gaussian_blur(pixels: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur; sigma = 0 returns the input bit-for-bit."""
    if sigma < 0:
        raise DataError(f"blur sigma must be non-negative, got {sigma}")
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise DataError(f"gaussian_blur expects a 2-D array, got shape {pixels.shape}")
    if sigma == 0:
        return pixels.copy()
    h, w = pixels.shape
    out = _blur_matrix(h, float(sigma)) @ pixels.astype(np.float64) @ _blur_matrix(w, float(sigma)).T
    return out.astype(np.float32)


def add_white_noise(pixels: np.ndarray, variance: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Add zero-mean Gaussian noise of the given variance, clamped to [-1, 1].

    The variance is expressed in the [-1, 1] intensity domain the pixels
    live in.
    """
    if variance < 0:
        raise DataError(f"noise variance must be non-negative, got {variance}")
    if variance == 0:
        return np.asarray(pixels).copy()
    noisy = pixels + rng.normal(0.0, math.sqrt(variance), size=pixels.shape)
    return np.clip(noisy, -1.0, 1.0).astype(np.float32)
