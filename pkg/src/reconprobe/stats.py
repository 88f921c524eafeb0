"""Correlation, leave-one-out stability, percent-change, and sweep summaries.

Correlations are computed across per-variant aggregates (one point per
inpainting variant) unless callers pool per-record values explicitly.
Sample (ddof=1) standard deviations throughout; an exactly-zero correlation
counts as positive for sign-flip purposes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .store import MetricStore


def _sign(x: float) -> int:
    return 1 if x >= 0.0 else -1


def pearson(xs, ys) -> float:
    """Sample Pearson correlation; needs n >= 3 and variance on both axes."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be 1-D and equal length")
    n = x.size
    if n < 3:
        raise ValueError(f"need n >= 3, got {n}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("zero variance")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class LooStability:
    r_full: float
    mu_loo: float
    sigma_loo: float
    sign_flips: int
    r_loo: tuple[float, ...]


def loo_stability(xs, ys) -> LooStability:
    """Full-data r plus the n leave-one-out correlations and their stats."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.size < 4:
        raise ValueError(f"need n >= 4 for leave-one-out, got {x.size}")
    r_full = pearson(x, y)
    r_loo = []
    degenerate = []
    for i in range(x.size):
        sub_x = np.delete(x, i)
        sub_y = np.delete(y, i)
        try:
            r_loo.append(pearson(sub_x, sub_y))
        except ValueError:
            degenerate.append(i)
    if degenerate:
        raise ValueError(f"zero variance in leave-one-out subsets {degenerate}")
    arr = np.asarray(r_loo)
    flips = int(sum(1 for r in r_loo if _sign(r) != _sign(r_full)))
    return LooStability(
        r_full=r_full,
        mu_loo=float(arr.mean()),
        sigma_loo=float(arr.std(ddof=1)),
        sign_flips=flips,
        r_loo=tuple(r_loo),
    )


def percent_delta(inpainted: float, original: float) -> float | None:
    """(inpainted - original) / original * 100; None when original is zero."""
    if not math.isfinite(original):
        raise ValueError(f"original must be finite, got {original}")
    if original == 0.0:
        return None
    return (inpainted - original) / original * 100.0


@dataclass(frozen=True)
class CorrelationPair:
    recon_metric: str
    caption_metric: str
    r: float
    points: tuple[tuple[str, float, float], ...]  # (variant, x, y)


@dataclass(frozen=True)
class CorrelationResult:
    pairs: tuple[CorrelationPair, ...]
    skipped: tuple[tuple[str, str], ...]
    warnings: tuple[str, ...]

    def get(self, recon_metric: str, caption_metric: str) -> CorrelationPair | None:
        for pair in self.pairs:
            if (pair.recon_metric, pair.caption_metric) == (recon_metric, caption_metric):
                return pair
        return None


def correlation_matrix(store: MetricStore, recon_metrics, caption_metrics,
                       variants=None) -> CorrelationResult:
    """Pearson r for every (recon, caption) metric pair across variants.

    One point per variant, taken from aggregate (record_id = None) rows.
    Missing cells are listed as warnings; pairs left with fewer than 3
    points are skipped with a warning.
    """
    if variants is None:
        variants = [
            v for v in store.variants()
            if v != "orig" and any(
                store.get(None, v, m) is not None
                for m in list(recon_metrics) + list(caption_metrics)
            )
        ]
    variants = sorted(variants)
    warnings: list[str] = []
    pairs: list[CorrelationPair] = []
    skipped: list[tuple[str, str]] = []
    missing_seen = set()
    for rm in recon_metrics:
        for cm in caption_metrics:
            points = []
            for variant in variants:
                x = store.get(None, variant, rm)
                y = store.get(None, variant, cm)
                for metric, val in ((rm, x), (cm, y)):
                    if val is None and (variant, metric) not in missing_seen:
                        missing_seen.add((variant, metric))
                        warnings.append(f"missing cell: variant {variant}, metric {metric}")
                if x is not None and y is not None:
                    points.append((variant, x, y))
            if len(points) < 3:
                skipped.append((rm, cm))
                warnings.append(
                    f"pair ({rm}, {cm}) skipped: only {len(points)} variants with both cells"
                )
                continue
            try:
                r = pearson([p[1] for p in points], [p[2] for p in points])
            except ValueError as exc:  # flat metric across variants
                skipped.append((rm, cm))
                warnings.append(f"pair ({rm}, {cm}) skipped: {exc}")
                continue
            pairs.append(CorrelationPair(rm, cm, r, tuple(points)))
    return CorrelationResult(tuple(pairs), tuple(skipped), tuple(warnings))


def loo_table(store: MetricStore, recon_metrics, caption_metrics,
              variants=None) -> tuple[list[dict], list[str]]:
    """Leave-one-out stability pooled per reconstruction metric.

    For each recon metric: the [min, max] range of full-data correlations
    over caption metrics, the mean/sample-std of all pooled LOO
    correlations, and the total sign-flip count across pairs. Pairs whose
    LOO subsets are degenerate (zero variance) are skipped with a warning,
    mirroring the missing-cell policy. Returns (rows, warnings).
    """
    matrix = correlation_matrix(store, recon_metrics, caption_metrics, variants)
    rows = []
    warnings: list[str] = []
    for rm in recon_metrics:
        r_fulls, pooled, flips = [], [], 0
        for cm in caption_metrics:
            pair = matrix.get(rm, cm)
            if pair is None or len(pair.points) < 4:
                continue
            try:
                stab = loo_stability([p[1] for p in pair.points],
                                     [p[2] for p in pair.points])
            except ValueError as exc:
                warnings.append(f"loo pair ({rm}, {cm}) skipped: {exc}")
                continue
            r_fulls.append(stab.r_full)
            pooled.extend(stab.r_loo)
            flips += stab.sign_flips
        if not r_fulls:
            continue
        arr = np.asarray(pooled)
        rows.append({
            "recon_metric": rm,
            "r_full_min": min(r_fulls),
            "r_full_max": max(r_fulls),
            "mu_loo": float(arr.mean()),
            "sigma_loo": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
            "sign_flips": flips,
        })
    return rows, warnings


def parse_guidance_variant(tag: str, guidance_key: str = "gs") -> tuple[str, float] | None:
    """Split "SD2-cm+gs7.5" into ("SD2-cm", 7.5); None when untagged."""
    marker = f"+{guidance_key}"
    if marker not in tag:
        return None
    base, _, raw = tag.rpartition(marker)
    try:
        return base, float(raw)
    except ValueError:
        return None


def guidance_sweep_summary(store: MetricStore, guidance_key: str = "gs",
                           metrics=("lpips", "ssim")) -> dict:
    """Per-guidance-scale mean and std for the requested metrics.

    Records are grouped by the scale parsed from their variant tags
    ("<base>+<key><scale>"); output is sorted ascending by scale and flags
    the scale with the best (lowest) mean LPIPS.
    """
    groups: dict[float, dict[str, list[float]]] = {}
    for rec in store:
        if rec.record_id is None:
            continue
        parsed = parse_guidance_variant(rec.variant, guidance_key)
        if parsed is None or rec.metric not in metrics:
            continue
        _, scale = parsed
        groups.setdefault(scale, {}).setdefault(rec.metric, []).append(rec.value)
    if len(groups) < 2:
        raise ValueError(f"need at least 2 guidance scales, found {len(groups)}")
    scales = []
    for scale in sorted(groups):
        stats = {}
        for metric in metrics:
            vals = np.asarray(groups[scale].get(metric, ()), dtype=np.float64)
            if vals.size == 0:
                continue
            stats[metric] = {
                "mean": float(vals.mean()),
                "std": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
                "n": int(vals.size),
            }
        scales.append({"scale": scale, "metrics": stats})
    best = None
    lpips_means = [
        (entry["metrics"]["lpips"]["mean"], entry["scale"])
        for entry in scales if "lpips" in entry["metrics"]
    ]
    if lpips_means:
        best = min(lpips_means)[1]
    return {"scales": scales, "best_lpips_scale": best}
