"""Run manifest parsing, validation, and region resolution.

The manifest is a JSON file with top-level keys records[], variants[],
settings{}, io_roots{}. Variant tags follow "<model>-<strategy>" with
strategy one of cm/gc/ld; the tag "orig" is reserved for the undegraded
baseline and is always accepted.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ManifestError
from .raster import ImageRaster, MaskRaster

STRATEGIES = ("cm", "gc", "ld")
ORIG_VARIANT = "orig"

# Minimum image side so an 11x11 SSIM window fits a quarter-area center box.
MIN_IMAGE_SIDE = 16

DEFAULT_CENTER_AREA_FRACTION = 0.25
DEFAULT_TEMPORAL_START_FRACTION = 0.375
DEFAULT_TEMPORAL_LENGTH_FRACTION = 0.25

DEFAULT_SETTINGS = {
    "inpaint": {
        "steps": 50,
        "guidance": 7.5,
        "strength": 1.0,
        "sd3_strength": 0.6,
        "prompt_max_tokens": 75,
    },
    "decode": {
        "beams": 6,
        "top_p": 0.9,
        "temperature": 0.8,
        "max_tokens": 64,
        "candidates": 3,
    },
    "degrade": {
        "gaussian_kernel": 21,
        "gaussian_sigma": None,
        "kmeans_k": 4,
        "down_factor": 8,
        "compress_block": 8,
        "compress_kept_coeffs": 3,
        "rng_seed": 0,
    },
}


@dataclass(frozen=True)
class RegionSpec:
    """Symbolic region description resolved against a concrete image.

    center_box uses area_fraction (fraction of image area); bbox uses
    half-open pixel coordinates (x0, y0, x1, y1); temporal_band uses
    start_fraction/length_fraction of image width.
    """

    kind: str
    area_fraction: float | None = None
    bbox: tuple[int, int, int, int] | None = None
    start_fraction: float | None = None
    length_fraction: float | None = None

    def __post_init__(self):
        if self.kind not in ("center_box", "bbox", "temporal_band"):
            raise ValueError(f"unknown region kind {self.kind!r}")

    @classmethod
    def from_json(cls, obj: dict) -> "RegionSpec":
        kind = obj.get("kind", "center_box")
        if kind == "center_box":
            return cls(kind="center_box", area_fraction=obj.get("area_fraction"))
        if kind == "bbox":
            bbox = obj.get("bbox")
            if bbox is None or len(bbox) != 4:
                raise ValueError("bbox region needs 4 coordinates [x0, y0, x1, y1]")
            return cls(kind="bbox", bbox=tuple(int(v) for v in bbox))
        if kind == "temporal_band":
            return cls(
                kind="temporal_band",
                start_fraction=obj.get("start_fraction"),
                length_fraction=obj.get("length_fraction"),
            )
        raise ValueError(f"unknown region kind {kind!r}")

    def to_json(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.kind == "center_box":
            out["area_fraction"] = self.area_fraction
        elif self.kind == "bbox":
            out["bbox"] = list(self.bbox)
        else:
            out["start_fraction"] = self.start_fraction
            out["length_fraction"] = self.length_fraction
        return out

    def with_defaults(self) -> "RegionSpec":
        if self.kind == "center_box" and self.area_fraction is None:
            return replace(self, area_fraction=DEFAULT_CENTER_AREA_FRACTION)
        if self.kind == "temporal_band":
            spec = self
            if spec.start_fraction is None:
                spec = replace(spec, start_fraction=DEFAULT_TEMPORAL_START_FRACTION)
            if spec.length_fraction is None:
                spec = replace(spec, length_fraction=DEFAULT_TEMPORAL_LENGTH_FRACTION)
            return spec
        return self


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    original_image: str
    region: RegionSpec
    references: tuple[str, ...] = ()
    dataset_tag: str = ""
    prompt: str = ""


@dataclass(frozen=True)
class RunManifest:
    records: tuple[DatasetRecord, ...]
    variants: tuple[str, ...]
    settings: dict = field(default_factory=dict)
    io_roots: dict = field(default_factory=dict)

    def record(self, record_id: str) -> DatasetRecord:
        for rec in self.records:
            if rec.id == record_id:
                return rec
        raise KeyError(record_id)

    def strategies(self) -> tuple[str, ...]:
        seen = []
        for tag in self.variants:
            strat = variant_strategy(tag)
            if strat and strat not in seen:
                seen.append(strat)
        return tuple(seen)


# validate_manifest returns the same shape with defaults filled and paths resolved
ValidatedManifest = RunManifest


def variant_strategy(tag: str) -> str | None:
    """Masking strategy suffix of a variant tag, None for the orig baseline."""
    if tag == ORIG_VARIANT:
        return None
    return tag.rsplit("-", 1)[1]


def _check_variant_tag(tag: str) -> None:
    if tag == ORIG_VARIANT:
        return
    if "-" not in tag:
        raise ManifestError(
            f"unknown variant tag scheme: {tag!r} (expected <model>-<cm|gc|ld> or 'orig')"
        )
    model, strat = tag.rsplit("-", 1)
    if not model or strat not in STRATEGIES:
        raise ManifestError(
            f"unknown variant tag scheme: {tag!r} (strategy must be one of {STRATEGIES})"
        )


def _region_extent(fraction: float, size: int) -> int:
    """Rounded pixel extent for a fractional span, at least 1, at most size."""
    return max(1, min(size, int(round(fraction * size))))


def resolve_region(record: DatasetRecord, image: ImageRaster) -> MaskRaster:
    """Deterministically rasterize a record's region against an image.

    Rounding rule: starts use floor, extents use round-half-up via round(),
    and the result is clamped to image bounds. center_box side fraction is
    sqrt(area_fraction) per axis; temporal_band spans full height.
    """
    spec = record.region.with_defaults()
    h, w = image.height, image.width
    bits = np.zeros((h, w), dtype=np.uint8)

    if spec.kind == "center_box":
        f = float(spec.area_fraction)
        if not 0.0 < f <= 1.0:
            raise ValueError(f"center_box area fraction {f} outside (0, 1]")
        side = math.sqrt(f)
        bh = _region_extent(side, h)
        bw = _region_extent(side, w)
        r0 = (h - bh) // 2
        c0 = (w - bw) // 2
        bits[r0 : r0 + bh, c0 : c0 + bw] = 1
    elif spec.kind == "bbox":
        x0, y0, x1, y1 = spec.bbox
        if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
            raise ValueError(
                f"bbox {spec.bbox} degenerate or out of bounds for {w}x{h} image"
            )
        bits[y0:y1, x0:x1] = 1
    else:  # temporal_band
        start = float(spec.start_fraction)
        length = float(spec.length_fraction)
        if not (0.0 <= start < 1.0 and 0.0 < length <= 1.0):
            raise ValueError(
                f"temporal band start={start} length={length} out of range"
            )
        c0 = int(math.floor(start * w))
        width = _region_extent(length, w)
        if c0 >= w:
            raise ValueError("temporal band starts past image width")
        c1 = min(w, c0 + width)
        bits[:, c0:c1] = 1

    if int(bits.sum()) == 0:
        raise ValueError("resolved region is empty")
    return MaskRaster(h, w, bits)


def _image_size(path: str) -> tuple[int, int]:
    try:
        with Image.open(path) as img:
            return img.width, img.height
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ManifestError(f"unreadable image {path}: {exc}") from exc


def _merge_defaults(base: dict, override: dict) -> dict:
    out = {}
    for key, val in base.items():
        if isinstance(val, dict):
            out[key] = _merge_defaults(val, override.get(key, {}) or {})
        else:
            out[key] = override.get(key, val)
    for key, val in override.items():
        if key not in out:
            out[key] = val
    return out


def parse_manifest(obj: dict, base_dir: str = ".") -> RunManifest:
    """Parse a manifest dict without touching the filesystem."""
    records = []
    for raw in obj.get("records", []):
        region = RegionSpec.from_json(raw.get("region", {}))
        path = raw.get("original_image", "")
        if not os.path.isabs(path):
            path = os.path.normpath(os.path.join(base_dir, path))
        records.append(
            DatasetRecord(
                id=str(raw["id"]),
                original_image=path,
                region=region,
                references=tuple(raw.get("references", ())),
                dataset_tag=str(raw.get("dataset_tag", "")),
                prompt=str(raw.get("prompt", "")),
            )
        )
    io_roots = {}
    for key, val in (obj.get("io_roots") or {}).items():
        io_roots[key] = val if os.path.isabs(val) else os.path.normpath(os.path.join(base_dir, val))
    return RunManifest(
        records=tuple(records),
        variants=tuple(obj.get("variants", ())),
        settings=obj.get("settings", {}) or {},
        io_roots=io_roots,
    )


def validate_manifest(manifest: RunManifest, check_files: bool = True) -> ValidatedManifest:
    """Fill defaults, verify ids/variants/paths, and return the validated manifest."""
    seen_ids = set()
    records = []
    for rec in manifest.records:
        if rec.id in seen_ids:
            raise ManifestError(f"duplicate id: {rec.id!r}")
        seen_ids.add(rec.id)
        if check_files:
            if not os.path.isfile(rec.original_image):
                raise ManifestError(f"missing file: {rec.original_image}")
            w, h = _image_size(rec.original_image)
            if h < MIN_IMAGE_SIDE or w < MIN_IMAGE_SIDE:
                raise ManifestError(
                    f"image {rec.original_image} is {w}x{h}; "
                    f"manifest images must be at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}"
                )
        records.append(replace(rec, region=rec.region.with_defaults()))

    seen_tags = set()
    for tag in manifest.variants:
        _check_variant_tag(tag)
        if tag in seen_tags:
            raise ManifestError(f"duplicate variant tag: {tag!r}")
        seen_tags.add(tag)

    settings = _merge_defaults(DEFAULT_SETTINGS, manifest.settings)
    return RunManifest(
        records=tuple(records),
        variants=manifest.variants,
        settings=settings,
        io_roots=dict(manifest.io_roots),
    )


def load_manifest(path, check_files: bool = True) -> ValidatedManifest:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot parse manifest {path}: {exc}") from exc
    base_dir = os.path.dirname(os.path.abspath(path))
    return validate_manifest(parse_manifest(obj, base_dir), check_files=check_files)
