"""Deterministic, model-free backend.

Stands in for the frozen models wherever real checkpoints are unavailable
(CI, schema smoke tests): outputs are structurally exact interchange files
with content derived deterministically from the inputs. The torch backend
(torch_backends.py) produces the real thing with the same schemas.
"""

from __future__ import annotations

import zlib

import numpy as np
from PIL import Image

VIT_LAYERS = 12
VIT_GRID = (14, 14)
VIT_INPUT = 224
VIT_PATCH = 16
EMBED_DIM = 32
TEXT_EMBED_DIM = 16


def _seed(*parts) -> int:
    return zlib.crc32("|".join(str(p) for p in parts).encode())


def load_rgb(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def load_mask_bits(path) -> np.ndarray:
    with Image.open(path) as img:
        return (np.asarray(img.convert("L")) > 0)


def save_rgb(pixels: np.ndarray, path) -> None:
    arr = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def inpaint(degraded: np.ndarray, mask: np.ndarray, prompt: str,
            record_id: str, variant: str) -> np.ndarray:
    """Fill the masked region with the surround mean plus seeded texture."""
    rng = np.random.default_rng(_seed("inpaint", record_id, variant, prompt))
    out = degraded.copy()
    surround = degraded[~mask] if (~mask).any() else degraded.reshape(-1, 3)
    base = surround.reshape(-1, 3).mean(axis=0)
    noise = rng.normal(0.0, 0.05, size=(int(mask.sum()), 3))
    out[mask] = np.clip(base[None, :] + noise, 0.0, 1.0)
    return out


FILLER_WORDS = ("thing", "object", "area", "shape", "scene")


def caption_candidates(prompt: str, references, region_kind: str,
                       record_id: str, variant: str, decode) -> list[str]:
    """Exactly decode.candidates captions, deterministic in the inputs.

    The original-image run ("orig") keeps the annotation text; degraded
    variants lose or swap words with a probability tied to the variant tag,
    so downstream caption metrics vary across variants the way a real
    captioner's would.
    """
    source = prompt or (references[0] if references else "an image")
    words = source.lower().split()
    rng = np.random.default_rng(_seed("caption", record_id, variant))
    damage = 0.0 if variant == "orig" else 0.1 + (_seed("damage", variant) % 40) / 100.0
    candidates = []
    for i in range(decode.candidates):
        out = []
        for word in words:
            roll = rng.random()
            if roll < damage / 2:
                continue  # dropped
            if roll < damage:
                out.append(FILLER_WORDS[int(rng.integers(len(FILLER_WORDS)))])
            else:
                out.append(word)
        text = " ".join(out[: decode.max_tokens]) or "an image"
        if region_kind == "bbox":
            text = f"the contents of the red bounding box: {text}"
        candidates.append(text)
    return candidates


def _patch_features(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(mean, std) luminance per 16px patch of the 224-resized image."""
    img = Image.fromarray(np.clip(np.rint(image * 255), 0, 255).astype(np.uint8), "RGB")
    resized = np.asarray(img.resize((VIT_INPUT, VIT_INPUT), Image.BILINEAR),
                         dtype=np.float64) / 255.0
    luma = resized @ np.array([0.299, 0.587, 0.114])
    rows, cols = VIT_GRID
    patches = luma.reshape(rows, VIT_PATCH, cols, VIT_PATCH)
    return patches.mean(axis=(1, 3)).reshape(-1), patches.std(axis=(1, 3)).reshape(-1)


def vit_extract(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-layer CLS-to-patch distributions (heads pre-averaged, CLS self-
    weight dropped by construction) and per-layer CLS embeddings."""
    mean, std = _patch_features(image)
    contrast = std - std.mean()
    proj = np.random.default_rng(20240101).normal(size=(2, EMBED_DIM))
    attn = np.empty((VIT_LAYERS, mean.size))
    cls = np.empty((VIT_LAYERS, EMBED_DIM))
    for layer in range(VIT_LAYERS):
        sharpness = 0.5 + 0.5 * layer
        logits = sharpness * contrast + 0.1 * mean
        logits = logits - logits.max()
        weights = np.exp(logits)
        attn[layer] = weights / weights.sum()
        pooled = np.stack([attn[layer] @ mean, attn[layer] @ std])
        cls[layer] = np.tanh((layer + 1) / VIT_LAYERS * (pooled @ proj))
    return attn, cls


def lpips_proxy(a: np.ndarray, b: np.ndarray) -> float:
    """Placeholder perceptual distance: L1 over 4x4-pooled luma features.

    Zero for identical inputs; replaced by the real network in the torch
    backend. Value is recorded with metric name "lpips" either way.
    """
    if a.shape != b.shape:
        raise ValueError(f"mismatched sizes {a.shape} vs {b.shape}")
    weights = np.array([0.299, 0.587, 0.114])
    fa = _pool4(a @ weights)
    fb = _pool4(b @ weights)
    return float(np.abs(fa - fb).mean())


def _pool4(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    h4, w4 = h - h % 4, w - w % 4
    return plane[:h4, :w4].reshape(h4 // 4, 4, w4 // 4, 4).mean(axis=(1, 3))


def text_embedding(text: str, dim: int = TEXT_EMBED_DIM) -> list[float]:
    """Unit-norm char-trigram hash embedding; identical text, identical vector."""
    vec = np.zeros(dim)
    padded = f" {text.lower().strip()} "
    for i in range(len(padded) - 2):
        tri = padded[i : i + 3]
        h = zlib.crc32(tri.encode())
        sign = 1.0 if (h >> 16) & 1 else -1.0
        vec[h % dim] += sign
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        vec[0] = 1.0
        norm = 1.0
    return (vec / norm).tolist()
