"""Attention and representation drift over frozen-encoder extractions.

Attention stacks arrive through the file interchange with heads already
averaged and the CLS self-weight dropped; each layer's CLS-to-patch row is
a probability distribution over the patch grid. TVD follows the
sum-of-absolute-differences convention (range [0, 2]); a halved convention
sits behind a flag.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .raster import MaskRaster

NORMALIZATION_TOLERANCE = 1e-4
RENORMALIZE_TOLERANCE = 1e-3
DEFAULT_PATCH_THRESHOLD = 0.5


@dataclass(frozen=True)
class AttentionStack:
    """Per-layer CLS-to-patch distributions plus CLS embeddings."""

    grid: tuple[int, int]
    attn: np.ndarray  # (layers, rows*cols)
    cls_embed: np.ndarray  # (layers, dim)

    def __post_init__(self):
        rows, cols = self.grid
        if self.attn.ndim != 2 or self.attn.shape[1] != rows * cols:
            raise ValueError(
                f"attention shape {self.attn.shape} does not match grid {self.grid}"
            )
        if self.cls_embed.ndim != 2 or self.cls_embed.shape[0] != self.attn.shape[0]:
            raise ValueError("cls_embed layer count does not match attention")
        if (self.attn < -1e-12).any():
            raise ValueError("attention weights must be nonnegative")
        sums = self.attn.sum(axis=1)
        bad = np.abs(sums - 1.0) > NORMALIZATION_TOLERANCE
        if bad.any():
            raise ValueError(
                f"attention rows not normalized at layers {np.flatnonzero(bad).tolist()}"
            )

    @property
    def layers(self) -> int:
        return int(self.attn.shape[0])

    @classmethod
    def from_raw(cls, grid, attn, cls_embed) -> "AttentionStack":
        """Build a stack, renormalizing rows whose sum is within 1e-3 of 1."""
        attn = np.asarray(attn, dtype=np.float64)
        cls_embed = np.asarray(cls_embed, dtype=np.float64)
        if attn.ndim != 2:
            raise ValueError("attention must be (layers, patches)")
        sums = attn.sum(axis=1)
        if (np.abs(sums - 1.0) > RENORMALIZE_TOLERANCE).any():
            worst = float(np.abs(sums - 1.0).max())
            raise ValueError(
                f"attention rows deviate from 1 by {worst}, beyond the 1e-3 ingest limit"
            )
        attn = np.clip(attn, 0.0, None)
        sums = attn.sum(axis=1)
        # renormalize only rows that actually deviate, so ingest is idempotent
        needs = np.abs(sums - 1.0) > 1e-12
        if needs.any():
            attn = attn.copy()
            attn[needs] = attn[needs] / sums[needs, None]
        return cls(grid=tuple(grid), attn=attn, cls_embed=cls_embed)


@dataclass(frozen=True)
class PatchMask:
    grid: tuple[int, int]
    bits: np.ndarray  # uint8 (rows, cols)

    def __post_init__(self):
        if self.bits.shape != self.grid:
            raise ValueError(f"patch bits shape {self.bits.shape} != grid {self.grid}")

    @property
    def flat(self) -> np.ndarray:
        return self.bits.reshape(-1).astype(bool)


@dataclass(frozen=True)
class LayerDriftProfile:
    """Per-layer drift metrics; tvd_total is defined as tvd_inner + tvd_outer."""

    tvd_total: tuple[float, ...]
    tvd_inner: tuple[float, ...]
    tvd_outer: tuple[float, ...]
    entropy_orig: tuple[float, ...]
    entropy_recon: tuple[float, ...]
    cls_cosine: tuple[float, ...]

    @property
    def layers(self) -> int:
        return len(self.tvd_total)


def _check_distribution(p: np.ndarray, name: str) -> None:
    if abs(math.fsum(p) - 1.0) > NORMALIZATION_TOLERANCE:
        raise ValueError(f"{name} is not normalized (sum={math.fsum(p)})")


def attention_tvd(p, q, halved: bool = False) -> float:
    """Sum of absolute differences across patch positions (range [0, 2])."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    _check_distribution(p, "p")
    _check_distribution(q, "q")
    total = math.fsum(np.abs(p - q))
    return total / 2.0 if halved else total


def attention_entropy(p) -> float:
    """Shannon entropy in nats with 0*ln(0) = 0."""
    p = np.asarray(p, dtype=np.float64)
    _check_distribution(p, "p")
    nz = p[p > 0.0]
    return -math.fsum(nz * np.log(nz)) + 0.0


def patch_mask_from_pixel_mask(mask: MaskRaster, grid: tuple[int, int],
                               threshold: float = DEFAULT_PATCH_THRESHOLD) -> PatchMask:
    """Coarsen a pixel mask to the patch grid.

    Patches tile from the top-left with size ceil(H/rows) x ceil(W/cols);
    the mask is zero-padded to a whole number of patches (padding counts as
    unmasked). A patch is inpainted iff its masked fraction >= threshold.
    """
    rows, cols = grid
    if rows > mask.height or cols > mask.width:
        raise ValueError(f"grid {grid} larger than image {mask.height}x{mask.width}")
    ph = -(-mask.height // rows)
    pw = -(-mask.width // cols)
    padded = np.zeros((rows * ph, cols * pw), dtype=np.float64)
    padded[: mask.height, : mask.width] = mask.bits
    fractions = padded.reshape(rows, ph, cols, pw).sum(axis=(1, 3)) / (ph * pw)
    bits = (fractions >= threshold).astype(np.uint8)
    return PatchMask(grid=(rows, cols), bits=bits)


def spatial_tvd(p, q, patch_mask: PatchMask, halved: bool = False) -> tuple[float, float]:
    """(tvd_inner, tvd_outer): absolute drift split by the patch mask,
    without renormalization so the two parts sum to the total."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    sel = patch_mask.flat
    if sel.shape != p.shape:
        raise ValueError(f"patch mask size {sel.shape} does not match distributions")
    _check_distribution(p, "p")
    _check_distribution(q, "q")
    d = np.abs(p - q)
    inner = math.fsum(d[sel])
    outer = math.fsum(d[~sel])
    if halved:
        return inner / 2.0, outer / 2.0
    return inner, outer


def cls_cosine(e_orig, e_recon) -> float:
    e1 = np.asarray(e_orig, dtype=np.float64)
    e2 = np.asarray(e_recon, dtype=np.float64)
    if e1.shape != e2.shape:
        raise ValueError(f"dimension mismatch: {e1.shape} vs {e2.shape}")
    n1 = float(np.linalg.norm(e1))
    n2 = float(np.linalg.norm(e2))
    if n1 == 0.0 or n2 == 0.0:
        raise ValueError("zero vector")
    return float(e1 @ e2) / (n1 * n2)


def layer_profile(orig: AttentionStack, recon: AttentionStack,
                  patch_mask: PatchMask, halved: bool = False) -> LayerDriftProfile:
    """Apply the four drift metrics at every layer of an (orig, recon) pair."""
    if orig.layers != recon.layers:
        raise ValueError(f"layer-count mismatch: {orig.layers} vs {recon.layers}")
    if orig.grid != recon.grid or orig.grid != patch_mask.grid:
        raise ValueError("grid mismatch between stacks and patch mask")
    inner, outer, total = [], [], []
    ent_o, ent_r, cosines = [], [], []
    for layer in range(orig.layers):
        ti, to = spatial_tvd(orig.attn[layer], recon.attn[layer], patch_mask, halved)
        inner.append(ti)
        outer.append(to)
        total.append(ti + to)
        ent_o.append(attention_entropy(orig.attn[layer]))
        ent_r.append(attention_entropy(recon.attn[layer]))
        cosines.append(cls_cosine(orig.cls_embed[layer], recon.cls_embed[layer]))
    return LayerDriftProfile(
        tvd_total=tuple(total),
        tvd_inner=tuple(inner),
        tvd_outer=tuple(outer),
        entropy_orig=tuple(ent_o),
        entropy_recon=tuple(ent_r),
        cls_cosine=tuple(cosines),
    )


PROFILE_FIELDS = ("tvd_total", "tvd_inner", "tvd_outer",
                  "entropy_orig", "entropy_recon", "cls_cosine")


def aggregate_profiles(profiles: list[LayerDriftProfile]) -> dict:
    """Corpus mean and sample std per layer for each profile field."""
    if not profiles:
        raise ValueError("no profiles to aggregate")
    layers = profiles[0].layers
    if any(p.layers != layers for p in profiles):
        raise ValueError("layer-count mismatch across profiles")
    out = {}
    for name in PROFILE_FIELDS:
        vals = np.array([getattr(p, name) for p in profiles], dtype=np.float64)
        mean = vals.mean(axis=0)
        std = vals.std(axis=0, ddof=1) if len(profiles) > 1 else np.zeros(layers)
        out[name] = {"mean": mean.tolist(), "std": std.tolist()}
    return out


def export_embedding_matrix(stacks: list[AttentionStack], labels: list[str],
                            layer: int, path) -> None:
    """One CSV row per stack: label plus that layer's CLS embedding."""
    if len(stacks) != len(labels):
        raise ValueError("one label per stack required")
    dims = {s.cls_embed.shape[1] for s in stacks}
    if len(dims) > 1:
        raise ValueError(f"inconsistent embedding dimensions: {sorted(dims)}")
    dim = dims.pop() if dims else 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"e{i}" for i in range(dim)])
        for stack, label in zip(stacks, labels):
            if not 0 <= layer < stack.layers:
                raise ValueError(f"layer {layer} out of range for {label}")
            writer.writerow([label] + [repr(float(v)) for v in stack.cls_embed[layer]])


def read_embedding_matrix(path) -> tuple[list[str], np.ndarray]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        labels, rows = [], []
        for row in reader:
            labels.append(row[0])
            rows.append([float(v) for v in row[1:]])
    dim = len(header) - 1
    matrix = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    return labels, matrix


# File interchange: {id}.{variant}.meta.json + .attn.csv + .cls.csv

def attention_file_names(record_id: str, variant: str) -> tuple[str, str, str]:
    base = f"{record_id}.{variant}"
    return f"{base}.meta.json", f"{base}.attn.csv", f"{base}.cls.csv"


def write_attention_files(stack: AttentionStack, record_id: str, variant: str, out_dir) -> None:
    import os

    meta_name, attn_name, cls_name = attention_file_names(record_id, variant)
    meta = {
        "record_id": record_id,
        "variant": variant,
        "layers": stack.layers,
        "grid": list(stack.grid),
        "embed_dim": int(stack.cls_embed.shape[1]),
    }
    with open(os.path.join(out_dir, meta_name), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, attn_name), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "patch_index", "weight"])
        for layer in range(stack.layers):
            for idx, weight in enumerate(stack.attn[layer]):
                writer.writerow([layer, idx, repr(float(weight))])
    with open(os.path.join(out_dir, cls_name), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "dim_index", "value"])
        for layer in range(stack.layers):
            for idx, value in enumerate(stack.cls_embed[layer]):
                writer.writerow([layer, idx, repr(float(value))])


def read_attention_files(record_id: str, variant: str, in_dir) -> AttentionStack:
    import os

    meta_name, attn_name, cls_name = attention_file_names(record_id, variant)
    with open(os.path.join(in_dir, meta_name), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    layers = int(meta["layers"])
    grid = tuple(meta["grid"])
    dim = int(meta["embed_dim"])
    attn = np.zeros((layers, grid[0] * grid[1]), dtype=np.float64)
    with open(os.path.join(in_dir, attn_name), "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for layer, idx, weight in reader:
            attn[int(layer), int(idx)] = float(weight)
    cls_embed = np.zeros((layers, dim), dtype=np.float64)
    with open(os.path.join(in_dir, cls_name), "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for layer, idx, value in reader:
            cls_embed[int(layer), int(idx)] = float(value)
    return AttentionStack.from_raw(grid, attn, cls_embed)
