"""Reconstruction fidelity restricted to the degraded region.

MSE/PSNR/SSIM are computed against the paired original using only masked
pixels (SSIM: map positions whose window center is masked). PSNR for a
perfect reconstruction is capped at 100 dB instead of infinity; corpus PSNR
is the mean of per-image values, never the PSNR of the mean MSE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate

from .raster import ImageRaster, MaskRaster
from .store import MetricRecord, parse_metric_line

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class FidelityScores:
    mse: float
    psnr: float
    ssim: float
    lpips: float | None = None  # externally scored


def _check_inputs(a: ImageRaster, b: ImageRaster, mask: MaskRaster) -> None:
    if (a.height, a.width, a.channels) != (b.height, b.width, b.channels):
        raise ValueError(
            f"dimension mismatch: {a.height}x{a.width}x{a.channels} vs "
            f"{b.height}x{b.width}x{b.channels}"
        )
    if a.scale != b.scale:
        raise ValueError(f"scale mismatch: {a.scale} vs {b.scale}")
    if (mask.height, mask.width) != (a.height, a.width):
        raise ValueError("mask dimensions do not match images")


def mse_region(a: ImageRaster, b: ImageRaster, mask: MaskRaster) -> float:
    """Mean squared channel difference over masked pixels only."""
    _check_inputs(a, b, mask)
    sel = mask.bits.astype(bool)
    diff = a.pixels[sel] - b.pixels[sel]
    return float(np.mean(diff * diff))


def psnr_from_mse(mse: float, max_value: float) -> float:
    if mse < 0:
        raise ValueError("negative mse")
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(max_value * max_value / mse)))


def psnr_region(a: ImageRaster, b: ImageRaster, mask: MaskRaster, max_value: float | None = None) -> float:
    """10*log10(MAX^2 / mse) over the masked region, capped at 100 dB."""
    if max_value is None:
        max_value = a.max_value
    return psnr_from_mse(mse_region(a, b, mask), max_value)


def to_luma(image: ImageRaster) -> np.ndarray:
    """Single-plane luma (BT.601 weights); grayscale passes through."""
    px = image.pixels
    if image.channels == 1:
        return px[:, :, 0].astype(np.float64)
    w = np.asarray(LUMA_WEIGHTS, dtype=np.float64)
    return px @ w


def gaussian_window_2d(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = size // 2
    xs = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(xs**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim_map(a_gray: np.ndarray, b_gray: np.ndarray, dynamic_range: float,
             window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Per-position SSIM over all fully-interior window centers.

    Returns an (H - window + 1, W - window + 1) map; position (i, j)
    corresponds to the window centered at pixel (i + window//2, j + window//2).
    """
    win = gaussian_window_2d(window, sigma)
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    half = window // 2

    def _filt(x):
        full = correlate(x, win, mode="constant", cval=0.0)
        return full[half : x.shape[0] - half, half : x.shape[1] - half]

    mu_a = _filt(a_gray)
    mu_b = _filt(b_gray)
    mu_aa = _filt(a_gray * a_gray)
    mu_bb = _filt(b_gray * b_gray)
    mu_ab = _filt(a_gray * b_gray)

    var_a = mu_aa - mu_a * mu_a
    var_b = mu_bb - mu_b * mu_b
    cov = mu_ab - mu_a * mu_b

    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return np.clip(num / den, -1.0, 1.0)


def ssim_region(a: ImageRaster, b: ImageRaster, mask: MaskRaster,
                window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> float:
    """Mean SSIM over map positions whose window center lies in the mask.

    Computed on luma with C1=(0.01*L)^2, C2=(0.03*L)^2 for the declared
    dynamic range L. Centers closer than window//2 to the border have no
    fully-interior window and are excluded.
    """
    _check_inputs(a, b, mask)
    r0, c0, r1, c1 = mask.bounding_box()
    if (r1 - r0) < window or (c1 - c0) < window:
        raise ValueError(
            f"region bounding box {r1 - r0}x{c1 - c0} smaller than {window}x{window} window"
        )
    if a.height < window or a.width < window:
        raise ValueError("image smaller than SSIM window")
    half = window // 2
    smap = ssim_map(to_luma(a), to_luma(b), a.max_value, window, sigma)
    centers = mask.bits[half : a.height - half, half : a.width - half].astype(bool)
    if not centers.any():
        raise ValueError("no masked window centers lie fully inside the image")
    return float(smap[centers].mean())


def fidelity_scores(a: ImageRaster, b: ImageRaster, mask: MaskRaster) -> FidelityScores:
    mse = mse_region(a, b, mask)
    return FidelityScores(
        mse=mse,
        psnr=psnr_from_mse(mse, a.max_value),
        ssim=ssim_region(a, b, mask),
    )


def ingest_external_scores(path) -> list[MetricRecord]:
    """Parse a JSON-lines scores file ({record_id, variant, metric, value}).

    Identical duplicate lines collapse to one record; duplicates that
    disagree raise with both values. Unknown metric names pass through.
    """
    seen: dict[tuple, MetricRecord] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = parse_metric_line(line, lineno)
            prev = seen.get(rec.key)
            if prev is not None and prev.value != rec.value:
                raise ValueError(
                    f"line {lineno}: conflicting duplicate for {rec.key}: "
                    f"{prev.value} vs {rec.value}"
                )
            seen[rec.key] = rec
    return list(seen.values())
