"""Grayscale image I/O and intensity normalization.

Pixels live in memory as float32 in [-1, 1].  A stored level q of an
n-bit image maps to 2*q/(2^n - 1) - 1, and back via round-half-away-
from-zero; both directions are exact for every 8- and 16-bit level, so a
load/save cycle is lossless.  Supported containers are single-channel
PNG (8 or 16 bit) and binary PGM (P5, maxval 255 or 65535, big-endian
16-bit samples per the netpbm convention).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError


@dataclass
class GrayImage:
    """A grayscale raster plus the source quantization it came from.

    resolution_um is informational (microns per pixel); neither PNG nor
    PGM persists it, so it survives only in memory and in manifests.
    """

    pixels: np.ndarray
    source_bit_depth: int = 8
    resolution_um: float | None = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 2 or self.pixels.size == 0:
            raise DataError(f"image pixels must be 2-D and non-empty, got shape {self.pixels.shape}")
        if self.source_bit_depth not in (8, 16):
            raise DataError(f"bit depth must be 8 or 16, got {self.source_bit_depth}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def normalize(quantized: np.ndarray, bit_depth: int) -> np.ndarray:
    """Map integer levels [0, 2^n - 1] to float32 [-1, 1]."""
    maxval = (1 << bit_depth) - 1
    return (2.0 * quantized / maxval - 1.0).astype(np.float32)


def quantize(pixels: np.ndarray, bit_depth: int) -> np.ndarray:
    """Map [-1, 1] floats back to integer levels, round half away from zero.

    Values outside [-1, 1] clip to the ends of the range.
    """
    maxval = (1 << bit_depth) - 1
    # levels are non-negative, so half-away-from-zero is floor(x + 0.5)
    levels = np.floor((pixels.astype(np.float64) + 1.0) / 2.0 * maxval + 0.5)
    levels = np.clip(levels, 0, maxval)
    return levels.astype(np.uint8 if bit_depth == 8 else np.uint16)


def load_image(path) -> GrayImage:
    path = Path(path)
    if not path.exists():
        raise DataError(f"image file not found: {path}")
    suffix = path.suffix.lower()
    if suffix == ".png":
        return _load_png(path)
    if suffix == ".pgm":
        return _load_pgm(path)
    raise DataError(f"unsupported image format '{suffix}' for {path} (expected .png or .pgm)")


def save_image(image: GrayImage, path, bit_depth: int | None = None) -> None:
    """Write an image, defaulting to its source bit depth."""
    path = Path(path)
    depth = image.source_bit_depth if bit_depth is None else bit_depth
    if depth not in (8, 16):
        raise DataError(f"bit depth must be 8 or 16, got {depth}")
    levels = quantize(image.pixels, depth)
    suffix = path.suffix.lower()
    if suffix == ".png":
        Image.fromarray(levels).save(path)
    elif suffix == ".pgm":
        _save_pgm(levels, depth, path)
    else:
        raise DataError(f"unsupported image format '{suffix}' for {path} (expected .png or .pgm)")


def _load_png(path: Path) -> GrayImage:
    try:
        with Image.open(path) as im:
            mode = im.mode
            arr = np.asarray(im)
    except (OSError, SyntaxError) as exc:
        raise DataError(f"cannot read PNG {path}: {exc}") from exc
    if mode == "L":
        return GrayImage(normalize(arr, 8), source_bit_depth=8)
    if mode in ("I;16", "I"):
        arr = arr.astype(np.int64)
        if arr.min() < 0 or arr.max() > 65535:
            raise DataError(f"{path}: integer PNG exceeds 16-bit range")
        return GrayImage(normalize(arr.astype(np.uint16), 16), source_bit_depth=16)
    raise DataError(
        f"{path}: expected single-channel grayscale PNG, got mode '{mode}'"
    )


# match() anchors at the scan offset, so no ^ here
_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_pgm_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    m = _PGM_TOKEN.match(buf, pos)
    if not m:
        raise DataError("truncated PGM header")
    return m.group(1), m.end()


def _load_pgm(path: Path) -> GrayImage:
    buf = path.read_bytes()
    try:
        magic, pos = _read_pgm_token(buf, 0)
        if magic != b"P5":
            raise DataError(f"{path}: not a binary PGM (magic {magic!r}, expected P5)")
        fields = []
        for _ in range(3):
            token, pos = _read_pgm_token(buf, pos)
            fields.append(int(token))
        width, height, maxval = fields
    except (ValueError, DataError) as exc:
        raise DataError(f"{path}: malformed PGM header: {exc}") from exc
    if maxval == 255:
        depth, dtype, itemsize = 8, np.uint8, 1
    elif maxval == 65535:
        depth, dtype, itemsize = 16, ">u2", 2  # netpbm 16-bit is big-endian
    else:
        raise DataError(f"{path}: unsupported PGM maxval {maxval} (expected 255 or 65535)")
    if width <= 0 or height <= 0:
        raise DataError(f"{path}: invalid PGM dimensions {width}x{height}")
    pos += 1  # single whitespace byte after maxval
    need = width * height * itemsize
    raster = buf[pos : pos + need]
    if len(raster) < need:
        raise DataError(f"{path}: PGM raster truncated ({len(raster)} of {need} bytes)")
    arr = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    return GrayImage(normalize(arr.astype(np.uint16), depth), source_bit_depth=depth)


def _save_pgm(levels: np.ndarray, depth: int, path: Path) -> None:
    h, w = levels.shape
    maxval = 255 if depth == 8 else 65535
    payload = levels.astype(np.uint8 if depth == 8 else ">u2").tobytes()
    path.write_bytes(b"P5\n%d %d\n%d\n" % (w, h, maxval) + payload)


@dataclass
class DifferenceMap:
    """Absolute per-pixel difference of two equally sized images."""

    values: np.ndarray
    display_scale: float = 1.0

    @property
    def mean(self) -> float:
        return float(self.values.mean(dtype=np.float64))

    def quantized(self) -> np.ndarray:
        """uint8 rendering: |difference| * display_scale mapped onto [0, 255]."""
        scaled = np.clip(self.values * self.display_scale / 2.0, 0.0, 1.0)
        return np.floor(scaled.astype(np.float64) * 255 + 0.5).astype(np.uint8)


def difference_map(a: GrayImage, b: GrayImage, display_scale: float = 1.0) -> DifferenceMap:
    if a.pixels.shape != b.pixels.shape:
        raise DataError(
            f"difference map needs equal sizes, got {a.pixels.shape} vs {b.pixels.shape}"
        )
    return DifferenceMap(np.abs(a.pixels - b.pixels), display_scale=display_scale)
