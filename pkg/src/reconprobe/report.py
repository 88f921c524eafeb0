"""Deterministic report rendering.

Report directory layout: fidelity.csv, captions.csv, captions_delta.csv,
loo.csv, layers.csv, correlations.csv, summary.json. Every CSV has a header
row; floats use shortest round-trip formatting (repr); rows are ordered by
variant tag lexicographically and layers ascending, so re-emission over
identical inputs is byte-identical.
"""

from __future__ import annotations

import csv
import json
import os

from .attention import PROFILE_FIELDS
from .stats import percent_delta

FIDELITY_COLUMNS = ("mse", "psnr", "ssim", "lpips")
CAPTION_COLUMNS = ("b1", "b2", "b3", "b4", "meteor", "rouge_l")

TABLE_FILES = {
    "fidelity": "fidelity.csv",
    "captions": "captions.csv",
    "captions_delta": "captions_delta.csv",
    "loo": "loo.csv",
    "layers": "layers.csv",
    "correlations": "correlations.csv",
}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def _column_order(rows: dict, base: tuple) -> list[str]:
    extra = sorted({m for cells in rows.values() for m in cells} - set(base))
    return [c for c in base if any(c in cells for cells in rows.values())] + extra


def render_variant_table(path, rows: dict, base_columns: tuple) -> None:
    """rows: variant -> {metric: value}; columns = known order then extras."""
    columns = _column_order(rows, base_columns)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant"] + columns)
        for variant in sorted(rows):
            writer.writerow([variant] + [_fmt(rows[variant].get(c)) for c in columns])


def render_captions_delta(path, rows: dict, orig_variant: str = "orig") -> bool:
    """Percent-change table against the orig row; False when orig is absent."""
    if orig_variant not in rows:
        return False
    orig = rows[orig_variant]
    deltas = {}
    for variant, cells in rows.items():
        if variant == orig_variant:
            continue
        deltas[variant] = {
            metric: percent_delta(value, orig[metric])
            for metric, value in cells.items()
            if metric in orig and value is not None and orig[metric] is not None
        }
    render_variant_table(path, deltas, CAPTION_COLUMNS)
    return True


def render_loo(path, rows: list[dict]) -> None:
    columns = ["recon_metric", "r_full_min", "r_full_max", "mu_loo", "sigma_loo", "sign_flips"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in sorted(rows, key=lambda r: r["recon_metric"]):
            writer.writerow([_fmt(row[c]) if c != "recon_metric" else row[c] for c in columns])


def render_correlations(path, pairs) -> None:
    """One row per scatter point: the Fig.-3-style point lists plus r."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["recon_metric", "caption_metric", "r", "variant", "x", "y"])
        for pair in sorted(pairs, key=lambda p: (p.recon_metric, p.caption_metric)):
            for variant, x, y in sorted(pair.points):
                writer.writerow([
                    pair.recon_metric, pair.caption_metric, _fmt(pair.r),
                    variant, _fmt(x), _fmt(y),
                ])


def render_layers(path, aggregates: dict) -> None:
    """aggregates: variant -> field -> {mean: [...], std: [...]} per layer."""
    columns = ["variant", "layer"]
    for name in PROFILE_FIELDS:
        columns += [f"{name}_mean", f"{name}_std"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for variant in sorted(aggregates):
            fields = aggregates[variant]
            layers = len(fields[PROFILE_FIELDS[0]]["mean"])
            for layer in range(layers):
                row = [variant, layer]
                for name in PROFILE_FIELDS:
                    row += [_fmt(fields[name]["mean"][layer]), _fmt(fields[name]["std"][layer])]
                writer.writerow(row)


def write_summary(path, summary: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def emit_report(run_state, report_dir) -> dict:
    """Write every table family present in the run state plus summary.json.

    run_state is a pipeline.RunState. Returns the summary dict. Absent
    inputs (for example no attention files) simply leave their table out;
    the summary notes which families are present.
    """
    os.makedirs(report_dir, exist_ok=True)
    present = {}

    if run_state.fidelity_rows:
        render_variant_table(
            os.path.join(report_dir, TABLE_FILES["fidelity"]),
            run_state.fidelity_rows, FIDELITY_COLUMNS,
        )
        present["fidelity"] = True
    if run_state.caption_rows:
        render_variant_table(
            os.path.join(report_dir, TABLE_FILES["captions"]),
            run_state.caption_rows, CAPTION_COLUMNS,
        )
        present["captions"] = True
        if render_captions_delta(
            os.path.join(report_dir, TABLE_FILES["captions_delta"]), run_state.caption_rows
        ):
            present["captions_delta"] = True
    if run_state.loo_rows:
        render_loo(os.path.join(report_dir, TABLE_FILES["loo"]), run_state.loo_rows)
        present["loo"] = True
    if run_state.correlation_pairs:
        render_correlations(
            os.path.join(report_dir, TABLE_FILES["correlations"]), run_state.correlation_pairs
        )
        present["correlations"] = True
    if run_state.layer_aggregates:
        render_layers(os.path.join(report_dir, TABLE_FILES["layers"]), run_state.layer_aggregates)
        present["layers"] = True

    notes = list(run_state.notes)
    for family in sorted(TABLE_FILES):
        if family not in present:
            notes.append(f"table {TABLE_FILES[family]} absent: no inputs for this family")

    summary = {
        "conventions": run_state.conventions(),
        "settings": run_state.settings_echo(),
        "stages_run": sorted(run_state.stages_run),
        "tables": {TABLE_FILES[k]: bool(present.get(k, False)) for k in sorted(TABLE_FILES)},
        "counts": run_state.counts(),
        "warnings": sorted(run_state.warnings),
        "notes": sorted(notes),
    }
    if run_state.guidance_summary is not None:
        summary["guidance_sweep"] = run_state.guidance_summary
    write_summary(os.path.join(report_dir, "summary.json"), summary)
    return summary
