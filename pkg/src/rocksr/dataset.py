"""Corpus management: manifests, splits, patch batches, augmentation.

A dataset is a JSONL manifest of HR/LR image pairs.  Paths inside the
file are stored relative to the manifest's directory whenever possible,
so a prepared corpus can be moved wholesale.  Rock class is carried per
entry and inferred from filename prefixes (sandstone_*, carbonate_*,
coal_*); anything else is "unknown".

Randomness is structural: the split is a seeded permutation, and every
training batch draws from a stream derived from (seed, step), so batch
content is a pure function of the run seed and the step index - the
property that makes prefetch and resume reproducible.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .images import GrayImage, load_image
from .resample import gaussian_blur, add_white_noise

ROCK_CLASSES = ("sandstone", "carbonate", "coal")
SPLITS = ("train", "valid", "test")

_MANIFEST_FIELDS = ("id", "hr_path", "lr_path", "rock_class", "split", "kernel", "scale")


def rock_class_of(name: str) -> str:
    stem = Path(name).name
    for cls in ROCK_CLASSES:
        if stem.startswith(cls + "_"):
            return cls
    return "unknown"


@dataclass
class ManifestEntry:
    id: str
    hr_path: str
    lr_path: str
    rock_class: str
    split: str
    kernel: str
    scale: int

    def validate(self) -> None:
        if self.split not in SPLITS:
            raise DataError(f"entry {self.id}: unknown split '{self.split}'")
        if self.scale < 1:
            raise DataError(f"entry {self.id}: bad scale {self.scale}")


@dataclass
class DatasetManifest:
    """Entries plus the directory their relative paths resolve against."""

    entries: list
    base_dir: Path = field(default_factory=Path)

    def for_split(self, split: str) -> list:
        return [e for e in self.entries if e.split == split]

    @property
    def scale(self) -> int:
        scales = {e.scale for e in self.entries}
        if len(scales) != 1:
            raise DataError(f"manifest mixes scales {sorted(scales)}")
        return scales.pop()

    def hr_file(self, entry: ManifestEntry) -> Path:
        return self.base_dir / entry.hr_path

    def lr_file(self, entry: ManifestEntry) -> Path:
        return self.base_dir / entry.lr_path


def assign_splits(entries: list, seed: int) -> list:
    """Shuffle deterministically and deal 80/10/10 train/valid/test.

    The permuted order is dealt as train first, then valid, then test,
    with the two holdout splits taking floor(n/10) entries each.  Fewer
    than 10 entries cannot populate three splits; that raises.
    """
    n = len(entries)
    if n < 10:
        raise DataError(f"need at least 10 entries to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_hold = n // 10
    n_train = n - 2 * n_hold
    out = []
    for rank, idx in enumerate(order):
        entry = entries[int(idx)]
        if rank < n_train:
            entry.split = "train"
        elif rank < n_train + n_hold:
            entry.split = "valid"
        else:
            entry.split = "test"
        out.append(entry)
    return [entries[i] for i in range(n)]  # original order, new split labels


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    lines = []
    for e in manifest.entries:
        record = {k: getattr(e, k) for k in _MANIFEST_FIELDS}
        lines.append(json.dumps(record, sort_keys=False))
    path.write_text("\n".join(lines) + "\n")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        missing = [k for k in _MANIFEST_FIELDS if k not in record]
        if missing:
            raise DataError(f"{path}:{lineno}: manifest entry missing fields {missing}")
        entry = ManifestEntry(**{k: record[k] for k in _MANIFEST_FIELDS})
        entry.validate()
        entries.append(entry)
    if not entries:
        raise DataError(f"{path}: manifest is empty")
    return DatasetManifest(entries=entries, base_dir=path.parent)


@dataclass
class AugmentSpec:
    """On-the-fly degradation ranges applied to LR patches.

    Per patch, blur sigma ~ U[0, blur_sigma_max] then white noise with
    variance ~ U[0, noise_variance_max]; the noise range is quoted for
    images in [0, 1], so applying it in the [-1, 1] pixel domain scales
    the variance by 4.
    """

    blur_sigma_max: float = 1.0
    noise_variance_max: float = 0.005
    enabled: bool = True

    def validate(self) -> None:
        if self.blur_sigma_max < 0 or self.noise_variance_max < 0:
            raise DataError("augmentation ranges must be non-negative")

    def draw(self, rng: np.random.Generator) -> tuple[float, float]:
        """(sigma, variance) for one patch; variance in [0,1]-image units."""
        return (
            float(rng.uniform(0.0, self.blur_sigma_max)),
            float(rng.uniform(0.0, self.noise_variance_max)),
        )

    def apply(self, lr_patch: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, tuple]:
        sigma, variance = self.draw(rng)
        out = gaussian_blur(lr_patch, sigma)
        out = add_white_noise(out, variance * 4.0, rng)  # [-1,1] domain
        return out, (sigma, variance)


class ImageCache:
    """LRU cache of decoded images keyed by absolute path."""

    def __init__(self, capacity: int = 256):
        if capacity < 1:
            raise ValueError(f"cache capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._store: OrderedDict[str, GrayImage] = OrderedDict()
        self.hits = 0
        self.misses = 0

    def get(self, path) -> GrayImage:
        key = str(Path(path).resolve())
        cached = self._store.get(key)
        if cached is not None:
            self._store.move_to_end(key)
            self.hits += 1
            return cached
        self.misses += 1
        img = load_image(path)
        self._store[key] = img
        if len(self._store) > self.capacity:
            self._store.popitem(last=False)
        return img


@dataclass
class PatchBatch:
    """One training batch: aligned LR/HR crops plus their provenance."""

    lr: np.ndarray  # (N, h, w, 1) float32
    hr: np.ndarray  # (N, h*scale, w*scale, 1) float32
    entry_ids: list
    lr_offsets: list  # (row, col) in LR pixels
    augment_draws: list | None = None  # (sigma, variance) per patch


def sample_patch_batch(
    manifest: DatasetManifest,
    split: str,
    batch_size: int,
    hr_crop: int,
    rng: np.random.Generator,
    augment: AugmentSpec | None = None,
    cache: ImageCache | None = None,
) -> PatchBatch:
    """Draw aligned random crops (with replacement) from one split.

    The LR offset is drawn uniformly; the HR offset is exactly
    scale * LR offset, which keeps the pair registered.  Augmentation,
    when enabled, degrades only the LR crop, fresh draws per patch.
    """
    entries = manifest.for_split(split)
    if not entries:
        raise DataError(f"split '{split}' has no entries")
    scale = manifest.scale
    if hr_crop % scale:
        raise DataError(f"hr_crop {hr_crop} is not divisible by scale {scale}")
    lr_crop = hr_crop // scale
    cache = cache or ImageCache()
    do_augment = augment is not None and augment.enabled

    lr_out = np.empty((batch_size, lr_crop, lr_crop, 1), dtype=np.float32)
    hr_out = np.empty((batch_size, hr_crop, hr_crop, 1), dtype=np.float32)
    ids, offsets = [], []
    draws = [] if do_augment else None
    choices = rng.integers(0, len(entries), size=batch_size)
    for slot in range(batch_size):
        entry = entries[int(choices[slot])]
        lr_img = cache.get(manifest.lr_file(entry)).pixels
        hr_img = cache.get(manifest.hr_file(entry)).pixels
        lh, lw = lr_img.shape
        if lh < lr_crop or lw < lr_crop:
            raise DataError(
                f"entry {entry.id}: LR image {lh}x{lw} smaller than crop {lr_crop}"
            )
        if hr_img.shape != (lh * scale, lw * scale):
            raise DataError(
                f"entry {entry.id}: HR size {hr_img.shape} does not match "
                f"LR {lr_img.shape} at scale {scale}"
            )
        oy = int(rng.integers(0, lh - lr_crop + 1))
        ox = int(rng.integers(0, lw - lr_crop + 1))
        lr_patch = lr_img[oy : oy + lr_crop, ox : ox + lr_crop]
        hy, hx = oy * scale, ox * scale
        hr_patch = hr_img[hy : hy + hr_crop, hx : hx + hr_crop]
        if do_augment:
            lr_patch, drawn = augment.apply(lr_patch, rng)
            draws.append(drawn)
        lr_out[slot, :, :, 0] = lr_patch
        hr_out[slot, :, :, 0] = hr_patch
        ids.append(entry.id)
        offsets.append((oy, ox))
    return PatchBatch(lr=lr_out, hr=hr_out, entry_ids=ids, lr_offsets=offsets,
                      augment_draws=draws)


def center_crop_to_multiple(pixels: np.ndarray, multiple: int) -> np.ndarray:
    """Trim edges symmetrically so both dims divide `multiple`."""
    h, w = pixels.shape
    nh, nw = (h // multiple) * multiple, (w // multiple) * multiple
    if nh == 0 or nw == 0:
        raise DataError(f"image {h}x{w} too small to crop to a multiple of {multiple}")
    oy, ox = (h - nh) // 2, (w - nw) // 2
    return pixels[oy : oy + nh, ox : ox + nw]


def prepare_corpus(hr_paths, out_dir, scale: int, seed: int,
                   kernel_mode: str = "random") -> tuple[DatasetManifest, list]:
    """Build an HR/LR corpus with its manifest under out_dir.

    Each source image is center-cropped to a multiple of the scale,
    written to out_dir/hr, degraded, and written to out_dir/lr.  With
    kernel_mode "random" the degradation kernel is a seeded per-image
    draw; "bicubic" uses bicubic for every image (the degradation then
    matches the upsampling baseline).  Unreadable inputs are skipped
    with a warning; corpora under 10 usable entries skip the holdout
    splits and go entirely to train (also warned, since evaluation then
    has nothing held out).  Returns the manifest and the warning list.

    Reruns with identical inputs produce byte-identical manifests: paths
    are relative, ids come from filenames, and all randomness is seeded.
    """
    from .images import save_image  # local import keeps module load light
    from .resample import ResampleKernel, downsample, pick_degradation_kernel
    from .rng import derive_rng

    out_dir = Path(out_dir)
    if scale < 1:
        raise DataError(f"prepare: scale must be >= 1, got {scale}")
    if kernel_mode not in ("random", "bicubic"):
        raise DataError(f"prepare: kernel_mode must be 'random' or 'bicubic', "
                        f"got '{kernel_mode}'")
    (out_dir / "hr").mkdir(parents=True, exist_ok=True)
    (out_dir / "lr").mkdir(parents=True, exist_ok=True)
    warnings: list[str] = []
    entries: list[ManifestEntry] = []
    kernel_rng = derive_rng(seed, "prepare-kernels")
    seen_ids = set()
    for src in hr_paths:
        src = Path(src)
        try:
            img = load_image(src)
        except DataError as exc:
            warnings.append(f"skipping {src}: {exc}")
            continue
        if src.stem in seen_ids:
            raise DataError(f"duplicate image id '{src.stem}' (from {src})")
        seen_ids.add(src.stem)
        cls = rock_class_of(src.name)
        if cls == "unknown":
            warnings.append(f"{src.name}: no rock-class prefix, recording class 'unknown'")
        cropped = center_crop_to_multiple(img.pixels, scale)
        if cropped.shape != img.pixels.shape:
            warnings.append(
                f"{src.name}: cropped {img.pixels.shape} -> {cropped.shape} "
                f"to divide by scale {scale}"
            )
        hr_img = GrayImage(cropped, source_bit_depth=img.source_bit_depth,
                           resolution_um=img.resolution_um)
        if kernel_mode == "bicubic":
            kernel = ResampleKernel("bicubic")
        else:
            kernel = pick_degradation_kernel(kernel_rng)
        lr_img = downsample(hr_img, scale, kernel)
        name = src.stem + src.suffix.lower()
        save_image(hr_img, out_dir / "hr" / name)
        save_image(lr_img, out_dir / "lr" / name)
        entries.append(ManifestEntry(
            id=src.stem,
            hr_path=f"hr/{name}",
            lr_path=f"lr/{name}",
            rock_class=cls,
            split="train",
            kernel=kernel.kind,
            scale=scale,
        ))
    if not entries:
        raise DataError("prepare: no usable input images")
    if len(entries) >= 10:
        assign_splits(entries, seed)
    else:
        warnings.append(
            f"only {len(entries)} entries: assigning everything to train, "
            "no holdout splits"
        )
    manifest = DatasetManifest(entries=entries, base_dir=out_dir)
    save_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest, warnings
