"""Writers for the core toolkit's interchange formats."""

from __future__ import annotations

import csv
import json
import os

import numpy as np


def write_jsonl(path, rows: list[dict]) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def write_settings_sidecar(path, block_name: str, block: dict, extra: dict | None = None) -> None:
    payload = {"settings": {block_name: block}}
    payload.update(extra or {})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_attention_files(record_id: str, variant: str, out_dir: str,
                          attn: np.ndarray, cls_embed: np.ndarray,
                          grid: tuple[int, int]) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    base = f"{record_id}.{variant}"
    meta_path = os.path.join(out_dir, f"{base}.meta.json")
    attn_path = os.path.join(out_dir, f"{base}.attn.csv")
    cls_path = os.path.join(out_dir, f"{base}.cls.csv")
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump({
            "record_id": record_id,
            "variant": variant,
            "layers": int(attn.shape[0]),
            "grid": [int(grid[0]), int(grid[1])],
            "embed_dim": int(cls_embed.shape[1]),
        }, fh, sort_keys=True)
        fh.write("\n")
    with open(attn_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "patch_index", "weight"])
        for layer in range(attn.shape[0]):
            for idx in range(attn.shape[1]):
                writer.writerow([layer, idx, repr(float(attn[layer, idx]))])
    with open(cls_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "dim_index", "value"])
        for layer in range(cls_embed.shape[0]):
            for idx in range(cls_embed.shape[1]):
                writer.writerow([layer, idx, repr(float(cls_embed[layer, idx]))])
    return [meta_path, attn_path, cls_path]
