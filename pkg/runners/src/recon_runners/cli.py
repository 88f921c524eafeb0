"""Standalone runner commands.

Each runner takes --manifest, --variant, --out and writes core-readable
interchange files with the full settings block echoed alongside. The
default backend is the deterministic procedural one; --backend torch runs
the real frozen models (requires the [torch] extras and local weights).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import procedural
from .interchange import write_attention_files, write_jsonl, write_settings_sidecar
from .manifest import (
    Manifest,
    degraded_path,
    image_for_variant,
    load_manifest,
    mask_path,
    recon_path,
    variant_strategy,
)
from .settings import RunnerSettings, truncate_prompt
from .torch_backends import BackendUnavailable


def _parser(name: str, needs_variant: bool = True) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=name)
    parser.add_argument("--manifest", required=True)
    parser.add_argument("--variant", required=needs_variant,
                        help="variant tag (e.g. SD2-cm) or 'orig'")
    parser.add_argument("--out", default=None,
                        help="output root override (default: manifest io_roots)")
    parser.add_argument("--backend", choices=("procedural", "torch"),
                        default="procedural")
    parser.add_argument("--model-tag", default="blip",
                        help="captioning/embedding model family tag")
    return parser


def _write_error_file(out_dir: str, name: str, message: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
        json.dump({"error": message}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _interchange_root(manifest: Manifest, out: str | None) -> str:
    return out or manifest.interchange_root


def main_inpaint(argv=None) -> int:
    args = _parser("runner-inpaint").parse_args(argv)
    manifest = load_manifest(args.manifest)
    settings = RunnerSettings.from_manifest(manifest.settings)
    block = settings.inpaint.for_variant(args.variant)
    strategy = variant_strategy(args.variant)
    if strategy not in ("cm", "gc", "ld"):
        print(f"error: variant {args.variant!r} has no masking strategy suffix",
              file=sys.stderr)
        return 2
    try:
        for record in manifest.records:
            degraded_file = degraded_path(manifest, record, args.variant)
            mask_file = mask_path(record)
            for path in (degraded_file, mask_file):
                if not os.path.isfile(path):
                    print(f"error: missing input {path} (run the degrade stage first)",
                          file=sys.stderr)
                    return 3
            degraded = procedural.load_rgb(degraded_file)
            mask = procedural.load_mask_bits(mask_file)
            prompt = truncate_prompt(record.prompt, block["prompt_max_tokens"])
            if args.backend == "torch":
                from . import torch_backends

                recon = torch_backends.inpaint(degraded, mask, prompt,
                                               record.id, args.variant, block)
            else:
                recon = procedural.inpaint(degraded, mask, prompt,
                                           record.id, args.variant)
            out_dir = args.out or os.path.dirname(record.original_image)
            os.makedirs(out_dir, exist_ok=True)
            out_png = os.path.join(out_dir, os.path.basename(recon_path(record, args.variant)))
            procedural.save_rgb(recon, out_png)
            write_settings_sidecar(
                out_png[: -len(".png")] + ".json", "inpaint", block,
                extra={"backend": args.backend, "variant": args.variant,
                       "prompt_tokens": len(prompt.split())},
            )
    except BackendUnavailable as exc:
        _write_error_file(_interchange_root(manifest, args.out),
                          f"runner-inpaint.{args.variant}.error.json", str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main_caption(argv=None) -> int:
    args = _parser("runner-caption").parse_args(argv)
    manifest = load_manifest(args.manifest)
    settings = RunnerSettings.from_manifest(manifest.settings)
    decode = settings.decode
    root = _interchange_root(manifest, args.out)
    rows = []
    try:
        for record in manifest.records:
            image_file = image_for_variant(manifest, record, args.variant)
            if not os.path.isfile(image_file):
                print(f"error: missing input {image_file}", file=sys.stderr)
                return 3
            region_kind = record.region.get("kind", "center_box")
            prompt = record.prompt
            if region_kind == "bbox":
                prompt = f"describe the contents of the red bounding box: {prompt}"
            candidates = None
            for _attempt in range(2):  # one retry on empty generation
                if args.backend == "torch":
                    from . import torch_backends

                    image = procedural.load_rgb(image_file)
                    candidates = torch_backends.caption_candidates(
                        image, prompt, args.model_tag, record.id, args.variant, decode)
                else:
                    candidates = procedural.caption_candidates(
                        record.prompt, record.references, region_kind,
                        record.id, args.variant, decode)
                if any(c.strip() for c in candidates):
                    break
            row = {"record_id": record.id, "variant": args.variant,
                   "candidates": candidates[: decode.candidates]}
            if not any(c.strip() for c in candidates):
                row["empty_generation"] = True
            rows.append(row)
    except BackendUnavailable as exc:
        _write_error_file(root, f"runner-caption.{args.variant}.error.json", str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out_path = os.path.join(root, "captions", f"{args.variant}.jsonl")
    write_jsonl(out_path, rows)
    write_settings_sidecar(out_path[: -len(".jsonl")] + ".settings.json",
                           "decode", decode.as_dict(),
                           extra={"backend": args.backend, "model_tag": args.model_tag})
    return 0


def main_vit(argv=None) -> int:
    args = _parser("runner-vit").parse_args(argv)
    manifest = load_manifest(args.manifest)
    root = _interchange_root(manifest, args.out)
    out_dir = os.path.join(root, "attention")
    try:
        for record in manifest.records:
            image_file = image_for_variant(manifest, record, args.variant)
            if not os.path.isfile(image_file):
                print(f"error: missing input {image_file}", file=sys.stderr)
                return 3
            image = procedural.load_rgb(image_file)
            if args.backend == "torch":
                from . import torch_backends

                attn, cls_embed = torch_backends.vit_extract(image)
            else:
                attn, cls_embed = procedural.vit_extract(image)
            grid_side = int(round(np.sqrt(attn.shape[1])))
            write_attention_files(record.id, args.variant, out_dir,
                                  attn, cls_embed, (grid_side, grid_side))
    except BackendUnavailable as exc:
        _write_error_file(root, f"runner-vit.{args.variant}.error.json", str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 1
    sidecar = {
        "backend": args.backend,
        "input_resize": procedural.VIT_INPUT,
        "patch_size": procedural.VIT_PATCH,
        "head_aggregation": "mean over heads, CLS self-weight dropped, renormalized",
    }
    with open(os.path.join(out_dir, f"extractor.{args.variant}.json"),
              "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def main_lpips(argv=None) -> int:
    args = _parser("runner-lpips").parse_args(argv)
    manifest = load_manifest(args.manifest)
    root = _interchange_root(manifest, args.out)
    rows = []
    try:
        for record in manifest.records:
            recon_file = recon_path(record, args.variant)
            if not os.path.isfile(recon_file):
                print(f"error: missing input {recon_file}", file=sys.stderr)
                return 3
            a = procedural.load_rgb(record.original_image)
            b = procedural.load_rgb(recon_file)
            if a.shape != b.shape:
                print(f"error: mismatched sizes for {record.id}: {a.shape} vs {b.shape}",
                      file=sys.stderr)
                return 2
            if args.backend == "torch":
                from . import torch_backends

                value = torch_backends.lpips_score(a, b)
            else:
                value = procedural.lpips_proxy(a, b)
            rows.append({"record_id": record.id, "variant": args.variant,
                         "metric": "lpips", "value": value})
    except BackendUnavailable as exc:
        _write_error_file(root, f"runner-lpips.{args.variant}.error.json", str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 1
    write_jsonl(os.path.join(root, "scores", f"lpips.{args.variant}.jsonl"), rows)
    return 0


def main_embed(argv=None) -> int:
    args = _parser("runner-embed").parse_args(argv)
    manifest = load_manifest(args.manifest)
    root = _interchange_root(manifest, args.out)
    captions_path = os.path.join(root, "captions", f"{args.variant}.jsonl")
    if not os.path.isfile(captions_path):
        print(f"error: missing input {captions_path} (run runner-caption first)",
              file=sys.stderr)
        return 3
    candidates: dict[str, str] = {}
    with open(captions_path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                candidates[str(obj["record_id"])] = obj["candidates"][0]
    tag = "sbert" if args.backend == "torch" else f"{args.model_tag}_hash"
    rows = []
    try:
        for record in manifest.records:
            if record.id not in candidates:
                continue
            if args.backend == "torch":
                from . import torch_backends

                embed = torch_backends.text_embedding
            else:
                embed = procedural.text_embedding
            rows.append({"record_id": record.id, "variant": args.variant,
                         "model_tag": tag, "vector": embed(candidates[record.id])})
            for i, ref in enumerate(record.references):
                rows.append({"record_id": record.id, "variant": f"ref:{i}",
                             "model_tag": tag, "vector": embed(ref)})
    except BackendUnavailable as exc:
        _write_error_file(root, f"runner-embed.{args.variant}.error.json", str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 1
    write_jsonl(os.path.join(root, "embeddings", f"{tag}.{args.variant}.jsonl"), rows)
    return 0
