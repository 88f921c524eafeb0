"""Synthetic full-run fixtures: images, recon outputs, captions, embeddings,
attention stacks, and external scores, all deterministic."""

import json
import os
import zlib

import numpy as np

from reconprobe.attention import AttentionStack, write_attention_files
from reconprobe.manifest import DatasetRecord, RegionSpec, resolve_region
from reconprobe.raster import ImageRaster, save_image

FIXTURE_VARIANTS = (
    "SD1.5-cm", "SD1.5-gc", "SD1.5-ld",
    "SD2-cm", "SD2-gc", "SD2-ld",
    "SD3-cm", "SD3-gc", "SD3-ld",
)

REFERENCES = {
    "r0": ["a man in a blue shirt rides a bike", "a cyclist wearing blue"],
    "r1": ["a brown cow stands in the field", "one cow grazing on grass"],
    "r2": ["a plane flies over the blue water", "an airplane above the sea"],
}

# per-variant word damage for synthetic candidate captions
VARIANT_DAMAGE = {v: i for i, v in enumerate(FIXTURE_VARIANTS)}


def _image_for(record_id: str) -> ImageRaster:
    rng = np.random.default_rng(zlib.crc32(record_id.encode()))
    px = rng.random((32, 32, 3))
    return ImageRaster(32, 32, 3, px, "unit")


def _recon_for(image: ImageRaster, mask_bits, variant: str, record_id: str) -> ImageRaster:
    seed = zlib.crc32(f"{record_id}|{variant}".encode())
    rng = np.random.default_rng(seed)
    sigma = 0.02 + 0.02 * VARIANT_DAMAGE[variant]
    px = image.pixels.copy()
    sel = mask_bits.astype(bool)
    px[sel] = np.clip(px[sel] + rng.normal(0, sigma, px[sel].shape), 0, 1)
    return ImageRaster(32, 32, 3, px, "unit")


def _candidates_for(record_id: str, variant: str) -> list[str]:
    base = REFERENCES[record_id][0].split()
    if variant == "orig":
        damaged = base
    else:
        damage = VARIANT_DAMAGE[variant]
        damaged = ["thing" if (i + damage) % (3 + damage % 3) == 0 else w
                   for i, w in enumerate(base)]
    sentence = " ".join(damaged)
    return [sentence, sentence + " outdoors", "a photo"]


def _unit(vec):
    arr = np.asarray(vec, dtype=np.float64)
    return (arr / np.linalg.norm(arr)).tolist()


def _embedding_for(record_id: str, variant: str) -> list[float]:
    rng = np.random.default_rng(zlib.crc32(f"embed|{record_id}".encode()))
    base = rng.normal(size=4)
    if variant.startswith("ref:"):
        tweak = 0.05 * int(variant.split(":")[1])
        return _unit(base + tweak)
    if variant == "orig":
        return _unit(base + 0.01)
    return _unit(base + 0.12 * (1 + VARIANT_DAMAGE[variant]))


def _attention_for(record_id: str, variant: str, mask_bits) -> AttentionStack:
    layers, grid = 4, (4, 4)
    rng = np.random.default_rng(zlib.crc32(f"attn|{record_id}".encode()))
    base = rng.random((layers, 16)) + 0.5
    base = base / base.sum(axis=1, keepdims=True)
    embed = rng.normal(size=(layers, 8))
    if variant != "orig":
        drift = 0.01 * (1 + VARIANT_DAMAGE[variant])
        patch_sel = mask_bits.reshape(4, 8, 4, 8).mean(axis=(1, 3)).reshape(-1) >= 0.5
        attn = base.copy()
        for layer in range(layers):
            bump = drift * (layer + 1) / layers
            attn[layer, patch_sel] += bump
            attn[layer] = attn[layer] / attn[layer].sum()
        embed = embed + drift
    else:
        attn = base
    return AttentionStack.from_raw(grid, attn, embed)


def build_fixture(root, variants=FIXTURE_VARIANTS, with_captions=True,
                  with_attention=True, with_lpips=True, with_recon=True,
                  settings_echoes=True, echo_overrides=None):
    """Create a complete synthetic run; returns the manifest path."""
    root = str(root)
    images = os.path.join(root, "images")
    interchange = os.path.join(root, "interchange")
    for sub in ("", "scores", "captions", "embeddings", "attention"):
        os.makedirs(os.path.join(interchange, sub), exist_ok=True)
    os.makedirs(images, exist_ok=True)

    records = []
    for record_id, refs in REFERENCES.items():
        image = _image_for(record_id)
        path = os.path.join(images, f"{record_id}.png")
        save_image(image, path)
        records.append({
            "id": record_id,
            "original_image": path,
            "region": {"kind": "center_box", "area_fraction": 0.25},
            "references": refs,
            "dataset_tag": "fixture",
            "prompt": refs[0],
        })

    manifest = {
        "records": records,
        "variants": list(variants),
        "settings": {"scale": "unit"},
        "io_roots": {
            "images": images,
            "interchange": interchange,
            "reports": os.path.join(root, "report"),
        },
    }
    manifest_path = os.path.join(root, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)

    region = RegionSpec("center_box", area_fraction=0.25)
    for record_id in REFERENCES:
        image = _image_for(record_id)
        rec = DatasetRecord(id=record_id, original_image="x", region=region)
        mask = resolve_region(rec, image)

        if with_recon:
            for variant in variants:
                recon = _recon_for(image, mask.bits, variant, record_id)
                save_image(recon, os.path.join(images, f"{record_id}.{variant}.recon.png"))
                if settings_echoes:
                    echo = {"settings": {"inpaint": {
                        "steps": 50, "guidance": 7.5,
                        "strength": 0.6 if variant.startswith("SD3") else 1.0,
                        "prompt_max_tokens": 75,
                    }}}
                    if echo_overrides:
                        echo["settings"]["inpaint"].update(echo_overrides)
                    with open(os.path.join(images, f"{record_id}.{variant}.recon.json"),
                              "w", encoding="utf-8") as fh:
                        json.dump(echo, fh)

        if with_attention:
            for variant in ("orig",) + tuple(variants):
                stack = _attention_for(record_id, variant, mask.bits)
                write_attention_files(stack, record_id, variant,
                                      os.path.join(interchange, "attention"))

    if with_captions:
        for variant in ("orig",) + tuple(variants):
            lines = []
            for record_id in REFERENCES:
                lines.append(json.dumps({
                    "record_id": record_id, "variant": variant,
                    "candidates": _candidates_for(record_id, variant),
                }))
            path = os.path.join(interchange, "captions", f"{variant}.jsonl")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write("\n".join(lines) + "\n")
            if settings_echoes:
                with open(path[:-len(".jsonl")] + ".settings.json", "w", encoding="utf-8") as fh:
                    json.dump({"settings": {"decode": {
                        "beams": 6, "top_p": 0.9, "temperature": 0.8, "candidates": 3,
                    }}}, fh)
        embed_lines = []
        for record_id, refs in REFERENCES.items():
            for variant in ("orig",) + tuple(variants):
                embed_lines.append(json.dumps({
                    "record_id": record_id, "variant": variant, "model_tag": "sbert",
                    "vector": _embedding_for(record_id, variant),
                }))
            for i in range(len(refs)):
                embed_lines.append(json.dumps({
                    "record_id": record_id, "variant": f"ref:{i}", "model_tag": "sbert",
                    "vector": _embedding_for(record_id, f"ref:{i}"),
                }))
        with open(os.path.join(interchange, "embeddings", "sbert.jsonl"),
                  "w", encoding="utf-8") as fh:
            fh.write("\n".join(embed_lines) + "\n")

    if with_lpips:
        lines = []
        for record_id in REFERENCES:
            for variant in variants:
                value = 0.05 + 0.02 * VARIANT_DAMAGE[variant]
                lines.append(json.dumps({
                    "record_id": record_id, "variant": variant,
                    "metric": "lpips", "value": value,
                }))
        with open(os.path.join(interchange, "scores", "lpips.jsonl"),
                  "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    return manifest_path


def hash_directory(path) -> dict:
    """Relative-name -> sha256 content map for byte-identical comparisons."""
    import hashlib

    out = {}
    for dirpath, _, names in os.walk(path):
        for name in names:
            full = os.path.join(dirpath, name)
            rel = os.path.relpath(full, path)
            out[rel] = hashlib.sha256(open(full, "rb").read()).hexdigest()
    return out
