"""Minimal manifest reading against the published JSON schema.

The runners deliberately do not import the core toolkit; the manifest file
format and the interchange file formats are the only contract.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field


@dataclass(frozen=True)
class Record:
    id: str
    original_image: str
    region: dict
    references: tuple[str, ...] = ()
    dataset_tag: str = ""
    prompt: str = ""


@dataclass(frozen=True)
class Manifest:
    records: tuple[Record, ...]
    variants: tuple[str, ...]
    settings: dict = field(default_factory=dict)
    images_root: str = "."
    interchange_root: str = "interchange"


def load_manifest(path) -> Manifest:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p: str) -> str:
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(base, p))

    records = []
    for raw in obj.get("records", ()):
        records.append(Record(
            id=str(raw["id"]),
            original_image=resolve(raw["original_image"]),
            region=raw.get("region", {}),
            references=tuple(raw.get("references", ())),
            dataset_tag=str(raw.get("dataset_tag", "")),
            prompt=str(raw.get("prompt", "")),
        ))
    roots = obj.get("io_roots", {}) or {}
    images_root = resolve(roots.get("images", "."))
    interchange_root = resolve(roots.get("interchange", "interchange"))
    return Manifest(
        records=tuple(records),
        variants=tuple(obj.get("variants", ())),
        settings=obj.get("settings", {}) or {},
        images_root=images_root,
        interchange_root=interchange_root,
    )


def variant_strategy(variant: str) -> str:
    return variant.rsplit("-", 1)[-1]


def degraded_path(manifest: Manifest, record: Record, variant: str) -> str:
    """The degraded input the inpainter reconstructs."""
    strategy = variant_strategy(variant)
    return os.path.join(os.path.dirname(record.original_image),
                        f"{record.id}.{strategy}.png")


def mask_path(record: Record) -> str:
    return os.path.join(os.path.dirname(record.original_image), f"{record.id}.mask.png")


def recon_path(record: Record, variant: str) -> str:
    return os.path.join(os.path.dirname(record.original_image),
                        f"{record.id}.{variant}.recon.png")


def image_for_variant(manifest: Manifest, record: Record, variant: str) -> str:
    """The image a captioner/extractor consumes for this variant."""
    if variant == "orig":
        return record.original_image
    return recon_path(record, variant)
