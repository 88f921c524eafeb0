"""Pixel rasters and bit-exact image IO (PNG / PPM / PGM, 8-bit only).

Two value scales exist side by side: "unit" rasters hold floats in [0, 1],
"byte" rasters hold integral floats in [0, 255]. Metrics never rescale
between them; the scale is declared per dataset in the manifest.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

SCALES = ("unit", "byte")
SCALE_MAX = {"unit": 1.0, "byte": 255.0}

_ALLOWED_SUFFIXES = {".png", ".ppm", ".pgm"}


@dataclass(frozen=True)
class ImageRaster:
    """H x W x C pixel grid with a declared value scale."""

    height: int
    width: int
    channels: int
    pixels: np.ndarray  # float64, shape (H, W, C)
    scale: str

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ValueError(f"unknown scale {self.scale!r}")
        if self.channels not in (1, 3):
            raise ValueError(f"channel count {self.channels} not in {{1, 3}}")
        px = self.pixels
        if px.shape != (self.height, self.width, self.channels):
            raise ValueError(
                f"pixel shape {px.shape} != ({self.height}, {self.width}, {self.channels})"
            )
        lo, hi = float(px.min(initial=0.0)), float(px.max(initial=0.0))
        if lo < 0.0 or hi > SCALE_MAX[self.scale]:
            raise ValueError(
                f"pixel values [{lo}, {hi}] outside declared {self.scale} range"
            )

    @property
    def max_value(self) -> float:
        return SCALE_MAX[self.scale]

    def with_pixels(self, pixels: np.ndarray) -> "ImageRaster":
        """Same geometry and scale, new pixel values (clamped to the scale range)."""
        px = np.clip(np.asarray(pixels, dtype=np.float64), 0.0, self.max_value)
        return ImageRaster(self.height, self.width, self.channels, px, self.scale)


@dataclass(frozen=True)
class MaskRaster:
    """Binary degraded-region mask paired with an image; 1 = degraded."""

    height: int
    width: int
    bits: np.ndarray  # uint8, shape (H, W), values 0/1

    def __post_init__(self):
        if self.bits.shape != (self.height, self.width):
            raise ValueError(f"mask shape {self.bits.shape} != ({self.height}, {self.width})")
        if not np.isin(self.bits, (0, 1)).all():
            raise ValueError("mask bits must be 0 or 1")
        if int(self.bits.sum()) == 0:
            raise ValueError("mask has no set bits")

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def bounding_box(self) -> tuple[int, int, int, int]:
        """(row0, col0, row1, col1), half-open on row1/col1."""
        rows = np.flatnonzero(self.bits.any(axis=1))
        cols = np.flatnonzero(self.bits.any(axis=0))
        return int(rows[0]), int(cols[0]), int(rows[-1]) + 1, int(cols[-1]) + 1


def _check_suffix(path: str) -> None:
    suffix = os.path.splitext(str(path))[1].lower()
    if suffix not in _ALLOWED_SUFFIXES:
        raise ValueError(f"unsupported image format {suffix!r} (PNG/PPM/PGM only)")


def load_image(path, scale: str = "byte") -> ImageRaster:
    """Load an 8-bit PNG/PPM/PGM file into a raster with the declared scale.

    8-bit sources round-trip losslessly through save_image/load_image.
    """
    if scale not in SCALES:
        raise ValueError(f"unknown scale {scale!r}")
    _check_suffix(path)
    if not os.path.isfile(path):
        raise ValueError(f"unreadable file: {path} (does not exist)")
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode in ("I", "I;16", "I;16B", "F"):
                raise ValueError(f"unsupported bit depth in {path} (mode {mode})")
            if mode == "P":
                img = img.convert("RGB")
                mode = "RGB"
            if mode not in ("L", "RGB"):
                raise ValueError(
                    f"channel count of {path} not in {{1, 3}} (mode {mode})"
                )
            arr = np.asarray(img, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ValueError(f"unreadable file: {path} ({exc})") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    px = arr.astype(np.float64)
    if scale == "unit":
        px = px / 255.0
    h, w, c = px.shape
    return ImageRaster(h, w, c, px, scale)


def save_image(raster: ImageRaster, path) -> None:
    """Write a raster as 8-bit PNG/PPM/PGM, quantizing unit-scale values by rounding."""
    _check_suffix(path)
    px = raster.pixels
    if raster.scale == "unit":
        px = px * 255.0
    arr = np.clip(np.rint(px), 0, 255).astype(np.uint8)
    if raster.channels == 1:
        img = Image.fromarray(arr[:, :, 0], mode="L")
    else:
        img = Image.fromarray(arr, mode="RGB")
    img.save(path)


def load_mask(path) -> MaskRaster:
    """Read a single-channel mask PNG; any nonzero pixel counts as degraded."""
    _check_suffix(path)
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ValueError(f"unreadable mask file: {path} ({exc})") from exc
    bits = (arr > 0).astype(np.uint8)
    return MaskRaster(arr.shape[0], arr.shape[1], bits)


def save_mask(mask: MaskRaster, path) -> None:
    """Write a mask as single-channel PNG, 0 = untouched, 255 = degraded."""
    _check_suffix(path)
    arr = (mask.bits * 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)
