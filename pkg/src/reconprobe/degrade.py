"""The three region-restricted degradation operators.

All operators leave pixels outside the mask bit-identical to the input and
are deterministic under a fixed seed. Blur and the low-dimensional chain are
computed around a per-channel anchor value (the working window's top-left
pixel) so constant inputs are exact fixed points despite float arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy.ndimage import convolve1d

from .raster import ImageRaster, MaskRaster

LOWDIM_STAGES = ("quantize", "resample", "compress")


@dataclass(frozen=True)
class DegradeParams:
    gaussian_kernel: int = 21
    gaussian_sigma: float | None = None  # defaults to kernel / 6
    kmeans_k: int = 4
    down_factor: int = 8
    compress_block: int = 8
    compress_kept_coeffs: int = 3
    rng_seed: int = 0

    def __post_init__(self):
        if self.gaussian_kernel < 3 or self.gaussian_kernel % 2 == 0:
            raise ValueError("gaussian_kernel must be odd and >= 3")
        if self.kmeans_k < 2:
            raise ValueError("kmeans_k must be >= 2")
        if self.down_factor < 2:
            raise ValueError("down_factor must be >= 2")
        if self.compress_kept_coeffs < 1:
            raise ValueError("compress_kept_coeffs must be >= 1")

    @property
    def sigma(self) -> float:
        return self.gaussian_sigma if self.gaussian_sigma is not None else self.gaussian_kernel / 6.0

    @classmethod
    def from_settings(cls, settings: dict) -> "DegradeParams":
        block = settings.get("degrade", settings)
        kwargs = {k: block[k] for k in (
            "gaussian_kernel", "gaussian_sigma", "kmeans_k", "down_factor",
            "compress_block", "compress_kept_coeffs", "rng_seed") if k in block}
        return cls(**kwargs)


def _check_pair(image: ImageRaster, mask: MaskRaster) -> None:
    if (image.height, image.width) != (mask.height, mask.width):
        raise ValueError(
            f"dimension mismatch: image {image.height}x{image.width} "
            f"vs mask {mask.height}x{mask.width}"
        )


def center_mask(image: ImageRaster, mask: MaskRaster) -> ImageRaster:
    """Zero out every masked pixel; leave the rest untouched."""
    _check_pair(image, mask)
    out = image.pixels.copy()
    out[mask.bits.astype(bool)] = 0.0
    return ImageRaster(image.height, image.width, image.channels, out, image.scale)


def gaussian_kernel_1d(size: int, sigma: float) -> np.ndarray:
    """Sampled, normalized 1-D Gaussian."""
    half = size // 2
    xs = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(xs**2) / (2.0 * sigma**2))
    return g / g.sum()


def gaussian_blur_region(image: ImageRaster, mask: MaskRaster, params: DegradeParams) -> ImageRaster:
    """Blur the whole image (separable Gaussian, reflected borders), then
    composite: masked pixels take blurred values, unmasked stay bit-identical."""
    _check_pair(image, mask)
    if params.gaussian_kernel > min(image.height, image.width):
        raise ValueError(
            f"kernel {params.gaussian_kernel} larger than image "
            f"{image.height}x{image.width}"
        )
    kernel = gaussian_kernel_1d(params.gaussian_kernel, params.sigma)
    px = image.pixels
    blurred = np.empty_like(px)
    for ch in range(image.channels):
        plane = px[:, :, ch]
        anchor = plane[0, 0]
        work = plane - anchor
        work = convolve1d(work, kernel, axis=0, mode="reflect")
        work = convolve1d(work, kernel, axis=1, mode="reflect")
        blurred[:, :, ch] = work + anchor
    sel = mask.bits.astype(bool)
    out = px.copy()
    out[sel] = np.clip(blurred[sel], 0.0, image.max_value)
    return ImageRaster(image.height, image.width, image.channels, out, image.scale)


def kmeans_quantize(pixels: np.ndarray, k: int, seed: int, max_iter: int = 20):
    """Seeded, deterministic k-means over color vectors.

    Returns (palette, assignment). k-means++ init, at most max_iter Lloyd
    steps, distance ties broken toward the lowest centroid index. When the
    input has at most k distinct colors the palette is exactly those colors
    (lexicographic order) and quantization is the identity map.
    """
    pts = np.asarray(pixels, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    if n == 0:
        raise ValueError("empty pixel list")

    distinct = np.unique(pts, axis=0)
    if distinct.shape[0] <= k:
        palette = distinct
        # exact match lookup so identical inputs map to themselves
        assign = np.zeros(n, dtype=np.int64)
        for idx, color in enumerate(palette):
            assign[(pts == color).all(axis=1)] = idx
        return palette, assign

    rng = np.random.default_rng(seed)
    centroids = np.empty((k, pts.shape[1]), dtype=np.float64)
    centroids[0] = pts[rng.integers(n)]
    d2 = ((pts - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        probs = d2 / d2.sum() if d2.sum() > 0 else np.full(n, 1.0 / n)
        centroids[i] = pts[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, ((pts - centroids[i]) ** 2).sum(axis=1))

    assign = None
    for _step in range(max_iter):
        dists = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(dists, axis=1)  # argmin takes the lowest index on ties
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for i in range(k):
            members = pts[assign == i]
            if members.shape[0] > 0:  # empty clusters keep their centroid
                centroids[i] = members.mean(axis=0)
    # final pass so the assignment is nearest-centroid against the returned palette
    dists = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    assign = np.argmin(dists, axis=1)
    return centroids, assign


def _box_resample(block: np.ndarray, factor: int) -> np.ndarray:
    """Box-downsample by `factor` then nearest-neighbor upsample back.

    Edge cells cover the remainder, so any block size is handled and the
    output shape equals the input shape.
    """
    h, w, c = block.shape
    out = np.empty_like(block)
    for r0 in range(0, h, factor):
        r1 = min(h, r0 + factor)
        for c0 in range(0, w, factor):
            c1 = min(w, c0 + factor)
            cell = block[r0:r1, c0:c1]
            out[r0:r1, c0:c1] = cell.mean(axis=(0, 1))
    return out


def _zigzag_keep_mask(block: int, kept: int) -> np.ndarray:
    """Boolean mask keeping the DC plus the lowest-frequency AC coefficients
    in zigzag order."""
    order = sorted(
        ((r, c) for r in range(block) for c in range(block)),
        key=lambda rc: (rc[0] + rc[1], rc[1] if (rc[0] + rc[1]) % 2 == 0 else rc[0]),
    )
    keep = np.zeros((block, block), dtype=bool)
    for r, c in order[: min(kept, block * block)]:
        keep[r, c] = True
    return keep


def _dct_truncate(plane: np.ndarray, block: int, kept: int) -> np.ndarray:
    """Blockwise orthonormal DCT-II, zeroing all but the kept coefficients."""
    h, w = plane.shape
    ph = (block - h % block) % block
    pw = (block - w % block) % block
    padded = np.pad(plane, ((0, ph), (0, pw)), mode="edge")
    keep = _zigzag_keep_mask(block, kept)
    out = np.empty_like(padded)
    for r0 in range(0, padded.shape[0], block):
        for c0 in range(0, padded.shape[1], block):
            tile = padded[r0 : r0 + block, c0 : c0 + block]
            coeffs = sfft.dctn(tile, norm="ortho")
            coeffs[~keep] = 0.0
            out[r0 : r0 + block, c0 : c0 + block] = sfft.idctn(coeffs, norm="ortho")
    return out[:h, :w]


def lowdim_degrade(
    image: ImageRaster,
    mask: MaskRaster,
    params: DegradeParams,
    stages: tuple[str, ...] = LOWDIM_STAGES,
) -> ImageRaster:
    """Low-dimensional degradation inside the region's bounding rectangle:
    k-means color quantization, box down/upsampling, then blockwise DCT
    coefficient truncation. Only masked pixels are composited back."""
    _check_pair(image, mask)
    for stage in stages:
        if stage not in LOWDIM_STAGES:
            raise ValueError(f"unknown lowdim stage {stage!r}")
    r0, c0, r1, c1 = mask.bounding_box()
    bh, bw = r1 - r0, c1 - c0
    if bh < params.down_factor or bw < params.down_factor:
        raise ValueError(
            f"region too small for down_factor: bbox {bh}x{bw} < {params.down_factor}"
        )

    sub = image.pixels[r0:r1, c0:c1, :].astype(np.float64)
    anchor = sub[0, 0, :].copy()
    work = sub - anchor[None, None, :]

    if "quantize" in stages:
        flat = work.reshape(-1, image.channels)
        palette, assign = kmeans_quantize(flat, params.kmeans_k, params.rng_seed)
        work = palette[assign].reshape(work.shape)
    if "resample" in stages:
        work = _box_resample(work, params.down_factor)
    if "compress" in stages:
        for ch in range(image.channels):
            work[:, :, ch] = _dct_truncate(
                work[:, :, ch], params.compress_block, params.compress_kept_coeffs
            )

    degraded = work + anchor[None, None, :]
    out = image.pixels.copy()
    sel = mask.bits.astype(bool)
    sub_sel = sel[r0:r1, c0:c1]
    region_out = out[r0:r1, c0:c1, :]
    region_out[sub_sel] = np.clip(degraded[sub_sel], 0.0, image.max_value)
    out[r0:r1, c0:c1, :] = region_out
    return ImageRaster(image.height, image.width, image.channels, out, image.scale)
