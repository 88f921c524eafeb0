"""Manifest-driven two-stage pipeline over the file-interchange boundary.

Stages run in dependency order (degrade, fidelity, captions, attention,
correlate, report) and are idempotent: each stage records a content digest
of its inputs in state.json under the computed/ root and is skipped when
nothing changed. All model inference sits behind interchange files, so a
full run needs zero model invocations once those files exist.

Interchange layout under io_roots["interchange"]:
    scores/*.jsonl        external per-record or aggregate metric rows
    captions/*.jsonl      {record_id, variant, candidates}
    embeddings/*.jsonl    {record_id, variant, model_tag, vector}
    attention/            {id}.{variant}.meta.json / .attn.csv / .cls.csv
    computed/             this pipeline's own intermediates + state.json
"""

from __future__ import annotations

import csv
import glob
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import report as report_mod
from .attention import (
    DEFAULT_PATCH_THRESHOLD,
    aggregate_profiles,
    attention_file_names,
    export_embedding_matrix,
    layer_profile,
    patch_mask_from_pixel_mask,
    read_attention_files,
)
from .captions import CaptionConfig, CaptionSet, aggregate_caption_scores
from .degrade import DegradeParams, center_mask, gaussian_blur_region, lowdim_degrade
from .errors import ManifestError, MissingInputError, StageError
from .fidelity import ingest_external_scores, mse_region, psnr_from_mse, ssim_region
from .manifest import ORIG_VARIANT, RunManifest, load_manifest, resolve_region
from .raster import load_image, save_image, save_mask
from .stats import correlation_matrix, guidance_sweep_summary, loo_table, parse_guidance_variant
from .store import MetricRecord, MetricStore, read_metrics_jsonl, write_metrics_jsonl

STAGES = ("degrade", "fidelity", "captions", "attention", "correlate", "report")
THREADS_ENV = "RECONPROBE_THREADS"

FIDELITY_FAMILY = frozenset(report_mod.FIDELITY_COLUMNS)

STRATEGY_OPS = {
    "cm": lambda img, mask, params: center_mask(img, mask),
    "gc": gaussian_blur_region,
    "ld": lowdim_degrade,
}


@dataclass(frozen=True)
class RunConfig:
    manifest_path: str
    out_root: str | None = None  # overrides io_roots["reports"]
    stages: tuple[str, ...] = STAGES
    tvd_halved: bool = False
    bleu_candidate: str = "first"
    patch_threshold: float = DEFAULT_PATCH_THRESHOLD
    seed: int | None = None
    force: bool = False
    stages_explicit: bool = False

    def __post_init__(self):
        for stage in self.stages:
            if stage not in STAGES:
                raise ValueError(f"unknown stage {stage!r}")


@dataclass
class RunState:
    manifest: RunManifest
    config: RunConfig
    fidelity_rows: dict = field(default_factory=dict)
    caption_rows: dict = field(default_factory=dict)
    loo_rows: list = field(default_factory=list)
    correlation_pairs: tuple = ()
    layer_aggregates: dict = field(default_factory=dict)
    guidance_summary: dict | None = None
    warnings: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    stages_run: list = field(default_factory=list)

    def conventions(self) -> dict:
        return {
            "tvd": "halved (range [0,1])" if self.config.tvd_halved
                   else "sum of absolute differences (range [0,2])",
            "bleu_candidate": self.config.bleu_candidate,
            "meteor": "lite variant: porter stems plus optional synonym table, "
                      "no lexical database",
            "psnr_cap_db": 100.0,
            "ssim": "single-scale, 11x11 gaussian window sigma 1.5, luma, "
                    "averaged over masked window centers",
            "patch_threshold": self.config.patch_threshold,
            "region_rounding": "floor for starts, round for extents, clamped",
        }

    def settings_echo(self) -> dict:
        return self.manifest.settings

    def counts(self) -> dict:
        return {
            "records": len(self.manifest.records),
            "variants": len(self.manifest.variants),
            "fidelity_variants": len(self.fidelity_rows),
            "caption_variants": len(self.caption_rows),
            "layer_variants": len(self.layer_aggregates),
            "correlation_pairs": len(self.correlation_pairs),
        }


class PipelineRun:
    def __init__(self, config: RunConfig):
        self.config = config
        self.manifest = load_manifest(config.manifest_path)
        self.state = RunState(manifest=self.manifest, config=config)
        base = os.path.dirname(os.path.abspath(config.manifest_path))
        roots = self.manifest.io_roots
        self.images_root = roots.get("images", base)
        self.interchange_root = roots.get("interchange", os.path.join(base, "interchange"))
        self.reports_root = config.out_root or roots.get("reports", os.path.join(base, "report"))
        self.computed_root = os.path.join(self.interchange_root, "computed")
        os.makedirs(self.computed_root, exist_ok=True)
        os.makedirs(self.reports_root, exist_ok=True)
        self.scale = self.manifest.settings.get("scale", "unit")

    # -- plumbing ---------------------------------------------------------

    def _threads(self) -> int:
        env = os.environ.get(THREADS_ENV)
        cap = min(8, os.cpu_count() or 1)
        if env:
            try:
                cap = max(1, int(env))
            except ValueError:
                self._warn(f"ignoring non-integer {THREADS_ENV}={env!r}")
        return cap

    def _map(self, fn, items):
        items = list(items)
        threads = self._threads()
        if threads <= 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))

    def _warn(self, message: str) -> None:
        self.state.warnings.append(message)

    def _note(self, message: str) -> None:
        # durable observations that belong in summary.json
        self.state.notes.append(message)

    @staticmethod
    def _log(message: str) -> None:
        # transient run chatter; never part of the report
        print(message)

    def _state_path(self) -> str:
        return os.path.join(self.computed_root, "state.json")

    def _load_stage_state(self) -> dict:
        path = self._state_path()
        if os.path.isfile(path):
            with open(path, "r", encoding="utf-8") as fh:
                return json.load(fh)
        return {}

    def _save_stage_state(self, stage_state: dict) -> None:
        with open(self._state_path(), "w", encoding="utf-8") as fh:
            json.dump(stage_state, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def _digest_file(path: str) -> str:
        h = hashlib.sha256()
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(65536), b""):
                h.update(chunk)
        return h.hexdigest()

    def _digest_inputs(self, paths, knobs) -> str:
        entries = sorted(
            (os.path.basename(p), self._digest_file(p)) for p in paths if os.path.isfile(p)
        )
        payload = json.dumps({"files": entries, "knobs": knobs}, sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def _stage_is_current(self, stage: str, digest: str) -> bool:
        if self.config.force:
            return False
        entry = self._load_stage_state().get(stage)
        if not entry or entry.get("inputs") != digest:
            return False
        for relpath, filedigest in entry.get("outputs", {}).items():
            path = self._output_abspath(relpath)
            if not os.path.isfile(path) or self._digest_file(path) != filedigest:
                return False
        return True

    def _output_abspath(self, relpath: str) -> str:
        if relpath.startswith("file:"):
            return relpath[len("file:"):]
        kind, _, name = relpath.partition("/")
        root = {"report": self.reports_root, "computed": self.computed_root}[kind]
        return os.path.join(root, name)

    def _record_stage(self, stage: str, digest: str, outputs) -> None:
        stage_state = self._load_stage_state()
        stage_state[stage] = {
            "inputs": digest,
            "outputs": {rel: self._digest_file(self._output_abspath(rel)) for rel in sorted(outputs)},
        }
        self._save_stage_state(stage_state)

    # -- interchange paths -------------------------------------------------

    def _original_path(self, record) -> str:
        return record.original_image

    def _sibling(self, record, name: str) -> str:
        return os.path.join(os.path.dirname(record.original_image), name)

    def _recon_path(self, record, variant: str) -> str:
        return self._sibling(record, f"{record.id}.{variant}.recon.png")

    def _scores_files(self) -> list[str]:
        return sorted(glob.glob(os.path.join(self.interchange_root, "scores", "*.jsonl")))

    def _caption_files(self) -> list[str]:
        return sorted(glob.glob(os.path.join(self.interchange_root, "captions", "*.jsonl")))

    def _embedding_files(self) -> list[str]:
        return sorted(glob.glob(os.path.join(self.interchange_root, "embeddings", "*.jsonl")))

    def _attention_dir(self) -> str:
        return os.path.join(self.interchange_root, "attention")

    # -- stages -------------------------------------------------------------

    def run(self) -> dict:
        requested = [s for s in STAGES if s in self.config.stages]
        for stage in requested:
            self.state.stages_run.append(stage)
            getattr(self, f"_stage_{stage}")()
        summary_path = os.path.join(self.reports_root, "summary.json")
        if "report" not in requested:
            # partial runs still leave a machine-readable trace of warnings
            self._persist_warnings()
        return {"reports_root": self.reports_root, "summary": summary_path}

    def _persist_warnings(self) -> None:
        for name, items in (("warnings.json", self.state.warnings),
                            ("notes.json", self.state.notes)):
            path = os.path.join(self.computed_root, name)
            existing = []
            if os.path.isfile(path):
                with open(path, "r", encoding="utf-8") as fh:
                    existing = json.load(fh)
            merged = sorted(set(existing) | set(items))
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(merged, fh, indent=2, sort_keys=True)
                fh.write("\n")

    def _load_persisted(self, name: str) -> list[str]:
        path = os.path.join(self.computed_root, name)
        if os.path.isfile(path):
            with open(path, "r", encoding="utf-8") as fh:
                return json.load(fh)
        return []

    # degrade ---------------------------------------------------------------

    def _degrade_params(self) -> DegradeParams:
        params = DegradeParams.from_settings(self.manifest.settings)
        if self.config.seed is not None:
            params = replace(params, rng_seed=self.config.seed)
        return params

    def _stage_degrade(self) -> None:
        params = self._degrade_params()
        strategies = self.manifest.strategies()
        inputs = [rec.original_image for rec in self.manifest.records]
        digest = self._digest_inputs(
            inputs,
            {"strategies": list(strategies), "scale": self.scale,
             "params": params.__dict__,
             "regions": [rec.region.to_json() for rec in self.manifest.records]},
        )
        if self._stage_is_current("degrade", digest):
            self._log("degrade stage skipped: outputs current")
            return

        def work(record):
            image = load_image(record.original_image, self.scale)
            mask = resolve_region(record, image)
            mask_path = self._sibling(record, f"{record.id}.mask.png")
            save_mask(mask, mask_path)
            outputs = [f"file:{mask_path}"]
            for strategy in strategies:
                degraded = STRATEGY_OPS[strategy](image, mask, params)
                out_path = self._sibling(record, f"{record.id}.{strategy}.png")
                save_image(degraded, out_path)
                outputs.append(f"file:{out_path}")
            return outputs

        outputs = [rel for rels in self._map(work, self.manifest.records) for rel in rels]
        self._record_stage("degrade", digest, outputs)

    # fidelity ---------------------------------------------------------------

    def _check_settings_echo(self, sidecar_path: str, block_name: str,
                             variant: str | None = None) -> None:
        if not os.path.isfile(sidecar_path):
            return
        try:
            with open(sidecar_path, "r", encoding="utf-8") as fh:
                echoed = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            self._warn(f"unreadable settings sidecar {os.path.basename(sidecar_path)}: {exc}")
            return
        expected = dict(self.manifest.settings.get(block_name, {}))
        if block_name == "inpaint":
            # the SD3 family runs at its own, lower strength
            sd3 = expected.pop("sd3_strength", None)
            if variant and variant.lower().startswith("sd3") and sd3 is not None:
                expected["strength"] = sd3
        got = echoed.get("settings", {}).get(block_name, {})
        for key, want in expected.items():
            if key in got and got[key] != want:
                self._warn(
                    f"{os.path.basename(sidecar_path)}: {block_name}.{key} echo "
                    f"{got[key]!r} != manifest {want!r}"
                )

    def _external_records(self) -> list[MetricRecord]:
        records: list[MetricRecord] = []
        for path in self._scores_files():
            try:
                records.extend(ingest_external_scores(path))
            except ValueError as exc:
                raise StageError(f"external scores {path}: {exc}") from exc
        return records

    def _stage_fidelity(self) -> None:
        missing = []
        pairs = []
        for record in self.manifest.records:
            for variant in self.manifest.variants:
                if variant == ORIG_VARIANT:
                    continue
                path = self._recon_path(record, variant)
                if os.path.isfile(path):
                    pairs.append((record, variant, path))
                else:
                    missing.append(os.path.basename(path))
        if missing:
            raise MissingInputError(
                "missing reconstruction images: " + ", ".join(sorted(missing)), missing
            )

        inputs = [p for _, _, p in pairs] + self._scores_files() + [
            rec.original_image for rec in self.manifest.records
        ]
        digest = self._digest_inputs(inputs, {"scale": self.scale})
        out_jsonl = os.path.join(self.computed_root, "fidelity_records.jsonl")
        out_csv = os.path.join(self.reports_root, report_mod.TABLE_FILES["fidelity"])
        if self._stage_is_current("fidelity", digest):
            self._log("fidelity stage skipped: outputs current")
            self._load_fidelity_state()
            return

        by_record: dict[str, list] = {}
        for record, variant, path in pairs:
            by_record.setdefault(record.id, []).append((record, variant, path))

        def work(items):
            record = items[0][0]
            original = load_image(record.original_image, self.scale)
            mask = resolve_region(record, original)
            out = []
            for _, variant, path in items:
                recon = load_image(path, self.scale)
                mse = mse_region(original, recon, mask)
                out.extend([
                    MetricRecord(record.id, variant, "mse", mse),
                    MetricRecord(record.id, variant, "psnr",
                                 psnr_from_mse(mse, original.max_value)),
                    MetricRecord(record.id, variant, "ssim",
                                 ssim_region(original, recon, mask)),
                ])
            return out

        store = MetricStore()
        for recs in self._map(work, by_record.values()):
            store.merge(recs)
        for record, variant, path in pairs:
            self._check_settings_echo(
                self._sibling(record, f"{record.id}.{variant}.recon.json"),
                "inpaint", variant,
            )
        try:
            store.merge(self._external_records())
        except ValueError as exc:
            raise StageError(f"external score conflict: {exc}") from exc

        # per-variant aggregates: mean of per-record values; PSNR averaged
        # per image, never recomputed from pooled MSE. Guidance-sweep rows
        # (variant "...+gs<scale>") stay out of the table; they are
        # summarized separately in summary.json.
        rows: dict[str, dict] = {}
        for variant in sorted({r.variant for r in store if r.record_id is not None}):
            if parse_guidance_variant(variant) is not None:
                continue
            cells = {}
            metrics = sorted({r.metric for r in store
                              if r.variant == variant and r.record_id is not None})
            for metric in metrics:
                vals = [v for _, v in store.values_for(variant, metric)]
                if vals and metric in FIDELITY_FAMILY:
                    cells[metric] = float(np.mean(vals))
            if cells:
                rows[variant] = cells
        for rec in store:
            if rec.record_id is None and rec.metric in FIDELITY_FAMILY:
                row = rows.setdefault(rec.variant, {})
                if rec.metric in row and row[rec.metric] != rec.value:
                    raise StageError(
                        f"aggregate conflict for ({rec.variant}, {rec.metric}): "
                        f"computed {row[rec.metric]} vs ingested {rec.value}"
                    )
                row[rec.metric] = rec.value
        for variant, cells in rows.items():
            for metric, value in cells.items():
                store.add(MetricRecord(None, variant, metric, value))

        write_metrics_jsonl(store.records(), out_jsonl)
        report_mod.render_variant_table(out_csv, rows, report_mod.FIDELITY_COLUMNS)
        self.state.fidelity_rows = rows
        self._persist_warnings()
        self._record_stage("fidelity", digest,
                           ["computed/fidelity_records.jsonl", "report/fidelity.csv"])

    def _load_fidelity_state(self) -> None:
        path = os.path.join(self.reports_root, report_mod.TABLE_FILES["fidelity"])
        if os.path.isfile(path):
            self.state.fidelity_rows = read_variant_table(path)

    # captions ----------------------------------------------------------------

    def _read_caption_sets(self) -> list[CaptionSet]:
        candidates: dict[tuple, list[str]] = {}
        for path in self._caption_files():
            with open(path, "r", encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    try:
                        obj = json.loads(line)
                        key = (str(obj["record_id"]), str(obj["variant"]))
                        cands = [str(c) for c in obj["candidates"]]
                    except (json.JSONDecodeError, KeyError, TypeError) as exc:
                        raise StageError(
                            f"{os.path.basename(path)} line {lineno}: malformed ({exc})"
                        ) from exc
                    candidates[key] = cands
            self._check_settings_echo(path[: -len(".jsonl")] + ".settings.json", "decode")

        embeds: dict[tuple, dict] = {}
        for path in self._embedding_files():
            with open(path, "r", encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    try:
                        obj = json.loads(line)
                        key = (str(obj["record_id"]), str(obj["variant"]), str(obj["model_tag"]))
                        vec = [float(v) for v in obj["vector"]]
                    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                        raise StageError(
                            f"{os.path.basename(path)} line {lineno}: malformed ({exc})"
                        ) from exc
                    embeds[key] = vec

        sets = []
        by_record: dict[str, object] = {rec.id: rec for rec in self.manifest.records}
        for (record_id, variant), cands in sorted(candidates.items()):
            record = by_record.get(record_id)
            if record is None:
                self._warn(f"captions for unknown record {record_id!r} ignored")
                continue
            if not record.references:
                raise StageError(
                    f"record {record_id}: references required for caption metrics"
                )
            cand_embeds, ref_embeds = {}, {}
            for (rid, var, tag), vec in embeds.items():
                if rid != record_id:
                    continue
                if var == variant:
                    cand_embeds[tag] = vec
                elif var.startswith("ref:"):
                    ref_embeds.setdefault(tag, []).append((int(var.split(":", 1)[1]), vec))
            ref_embeds = {tag: [v for _, v in sorted(vals)] for tag, vals in ref_embeds.items()}
            sets.append(CaptionSet(
                record_id=record_id,
                variant=variant,
                candidates=tuple(cands),
                references=record.references,
                candidate_embeddings=cand_embeds,
                reference_embeddings=ref_embeds,
            ))
        return sets

    def _stage_captions(self) -> None:
        caption_files = self._caption_files()
        inputs = caption_files + self._embedding_files() + self._scores_files()
        digest = self._digest_inputs(inputs, {"bleu_candidate": self.config.bleu_candidate})
        out_jsonl = os.path.join(self.computed_root, "caption_records.jsonl")
        out_csv = os.path.join(self.reports_root, report_mod.TABLE_FILES["captions"])
        if self._stage_is_current("captions", digest):
            self._log("captions stage skipped: outputs current")
            self._load_caption_state()
            return

        config = CaptionConfig(candidate_rule=self.config.bleu_candidate)
        sets = self._read_caption_sets()
        rows: dict[str, dict] = {}
        store = MetricStore()
        if sets:
            scores, warnings = aggregate_caption_scores(sets, config)
            for msg in warnings:
                self._warn(msg)
            rows = {variant: cs.as_dict() for variant, cs in scores.items()}

        external = [r for r in self._external_records() if r.metric not in FIDELITY_FAMILY]
        try:
            store.merge(external)
        except ValueError as exc:
            raise StageError(f"external score conflict: {exc}") from exc
        for rec in store:
            if rec.record_id is None:
                row = rows.setdefault(rec.variant, {})
                if rec.metric in row and row[rec.metric] != rec.value:
                    raise StageError(
                        f"aggregate conflict for ({rec.variant}, {rec.metric}): "
                        f"computed {row[rec.metric]} vs ingested {rec.value}"
                    )
                row[rec.metric] = rec.value

        if not rows:
            if self.config.stages_explicit:
                raise MissingInputError(
                    "no caption inputs: expected captions/*.jsonl or aggregate scores",
                    ["captions/*.jsonl"],
                )
            self._note("caption inputs absent; captions table not produced")
            return

        for variant, cells in sorted(rows.items()):
            for metric, value in sorted(cells.items()):
                store.add(MetricRecord(None, variant, metric, value))
        write_metrics_jsonl(store.records(), out_jsonl)
        report_mod.render_variant_table(out_csv, rows, report_mod.CAPTION_COLUMNS)
        delta_path = os.path.join(self.reports_root, report_mod.TABLE_FILES["captions_delta"])
        if not report_mod.render_captions_delta(delta_path, rows):
            self._note("captions_delta.csv absent: no orig row to compare against")
        self.state.caption_rows = rows
        self._persist_warnings()
        outputs = ["computed/caption_records.jsonl", "report/captions.csv"]
        if os.path.isfile(delta_path):
            outputs.append("report/captions_delta.csv")
        self._record_stage("captions", digest, outputs)

    def _load_caption_state(self) -> None:
        path = os.path.join(self.reports_root, report_mod.TABLE_FILES["captions"])
        if os.path.isfile(path):
            self.state.caption_rows = read_variant_table(path)

    # attention -----------------------------------------------------------------

    def _stage_attention(self) -> None:
        attn_dir = self._attention_dir()
        have_dir = os.path.isdir(attn_dir) and any(os.scandir(attn_dir))
        if not have_dir:
            if self.config.stages_explicit and "attention" in self.config.stages:
                raise MissingInputError(
                    f"no attention interchange files under {os.path.basename(attn_dir)}/",
                    ["attention/"],
                )
            self._note("attention inputs absent; layer tables not produced")
            return

        missing = []
        wanted = []
        for record in self.manifest.records:
            for variant in (ORIG_VARIANT,) + tuple(
                v for v in self.manifest.variants if v != ORIG_VARIANT
            ):
                names = attention_file_names(record.id, variant)
                paths = [os.path.join(attn_dir, n) for n in names]
                if all(os.path.isfile(p) for p in paths):
                    wanted.append((record, variant, paths))
                else:
                    missing.extend(n for n, p in zip(names, paths) if not os.path.isfile(p))
        if missing:
            raise MissingInputError(
                "missing attention interchange files: " + ", ".join(sorted(missing)), missing
            )

        inputs = [p for _, _, paths in wanted for p in paths]
        digest = self._digest_inputs(inputs, {
            "patch_threshold": self.config.patch_threshold,
            "tvd_halved": self.config.tvd_halved,
            "scale": self.scale,
        })
        out_json = os.path.join(self.computed_root, "layer_profiles.json")
        out_csv = os.path.join(self.reports_root, report_mod.TABLE_FILES["layers"])
        if self._stage_is_current("attention", digest):
            self._log("attention stage skipped: outputs current")
            self._load_attention_state()
            return

        stacks = {
            (record.id, variant): read_attention_files(record.id, variant, attn_dir)
            for record, variant, _ in wanted
        }
        profiles: dict[str, list] = {}
        for record in self.manifest.records:
            orig = stacks.get((record.id, ORIG_VARIANT))
            if orig is None:
                continue
            image = load_image(record.original_image, self.scale)
            mask = resolve_region(record, image)
            pmask = patch_mask_from_pixel_mask(mask, orig.grid, self.config.patch_threshold)
            for variant in self.manifest.variants:
                if variant == ORIG_VARIANT:
                    continue
                recon = stacks.get((record.id, variant))
                if recon is None:
                    continue
                profiles.setdefault(variant, []).append(
                    layer_profile(orig, recon, pmask, self.config.tvd_halved)
                )
        aggregates = {
            variant: aggregate_profiles(plist) for variant, plist in sorted(profiles.items())
        }
        with open(out_json, "w", encoding="utf-8") as fh:
            json.dump(aggregates, fh, indent=2, sort_keys=True)
            fh.write("\n")
        report_mod.render_layers(out_csv, aggregates)

        # final-layer CLS embedding matrix for external projection tools
        labeled = sorted(stacks.items())
        export_embedding_matrix(
            [stack for _, stack in labeled],
            [f"{record_id}:{variant}" for (record_id, variant), _ in labeled],
            layer=labeled[0][1].layers - 1,
            path=os.path.join(self.computed_root, "cls_embeddings_final_layer.csv"),
        )

        self.state.layer_aggregates = aggregates
        self._persist_warnings()
        self._record_stage("attention", digest, [
            "computed/layer_profiles.json",
            "computed/cls_embeddings_final_layer.csv",
            "report/layers.csv",
        ])

    def _load_attention_state(self) -> None:
        path = os.path.join(self.computed_root, "layer_profiles.json")
        if os.path.isfile(path):
            with open(path, "r", encoding="utf-8") as fh:
                self.state.layer_aggregates = json.load(fh)

    # correlate -------------------------------------------------------------------

    def _stage_correlate(self) -> None:
        fidelity_csv = os.path.join(self.reports_root, report_mod.TABLE_FILES["fidelity"])
        captions_csv = os.path.join(self.reports_root, report_mod.TABLE_FILES["captions"])
        for path, name in ((fidelity_csv, "fidelity.csv"), (captions_csv, "captions.csv")):
            if not os.path.isfile(path):
                raise MissingInputError(
                    f"{name} not found; run the "
                    f"{'fidelity' if name == 'fidelity.csv' else 'captions'} stage first",
                    [name],
                )
        records_jsonl = os.path.join(self.computed_root, "fidelity_records.jsonl")
        inputs = [fidelity_csv, captions_csv] + (
            [records_jsonl] if os.path.isfile(records_jsonl) else []
        )
        digest = self._digest_inputs(inputs, {})
        if self._stage_is_current("correlate", digest):
            self._log("correlate stage skipped: outputs current")
            self._load_correlate_state()
            return

        fidelity_rows = read_variant_table(fidelity_csv)
        caption_rows = read_variant_table(captions_csv)
        self.state.fidelity_rows = fidelity_rows
        self.state.caption_rows = caption_rows

        store = MetricStore()
        for variant, cells in fidelity_rows.items():
            for metric, value in cells.items():
                store.add(MetricRecord(None, variant, metric, value))
        for variant, cells in caption_rows.items():
            for metric, value in cells.items():
                store.add(MetricRecord(None, variant, metric, value))

        recon_metrics = [m for m in report_mod.FIDELITY_COLUMNS
                         if any(m in c for c in fidelity_rows.values())]
        caption_metrics = sorted({m for c in caption_rows.values() for m in c})
        variants = sorted(
            (set(fidelity_rows) & set(caption_rows)) - {ORIG_VARIANT}
        )
        matrix = correlation_matrix(store, recon_metrics, caption_metrics, variants)
        for msg in matrix.warnings:
            self._warn(msg)
        self.state.correlation_pairs = matrix.pairs
        loo_rows, loo_warnings = loo_table(store, recon_metrics, caption_metrics, variants)
        for msg in loo_warnings:
            self._warn(msg)
        self.state.loo_rows = loo_rows

        if os.path.isfile(records_jsonl):
            per_record = MetricStore()
            per_record.merge(read_metrics_jsonl(records_jsonl))
            try:
                self.state.guidance_summary = guidance_sweep_summary(per_record)
            except ValueError:
                self.state.guidance_summary = None

        report_mod.render_correlations(
            os.path.join(self.reports_root, report_mod.TABLE_FILES["correlations"]),
            self.state.correlation_pairs,
        )
        report_mod.render_loo(
            os.path.join(self.reports_root, report_mod.TABLE_FILES["loo"]), self.state.loo_rows
        )
        with open(os.path.join(self.computed_root, "correlate.json"), "w", encoding="utf-8") as fh:
            json.dump({
                "pairs": [
                    {"recon_metric": p.recon_metric, "caption_metric": p.caption_metric,
                     "r": p.r, "points": [list(pt) for pt in p.points]}
                    for p in self.state.correlation_pairs
                ],
                "loo": self.state.loo_rows,
                "guidance": self.state.guidance_summary,
            }, fh, indent=2, sort_keys=True)
            fh.write("\n")
        self._persist_warnings()
        self._record_stage("correlate", digest, [
            "computed/correlate.json", "report/correlations.csv", "report/loo.csv",
        ])

    def _load_correlate_state(self) -> None:
        path = os.path.join(self.computed_root, "correlate.json")
        if not os.path.isfile(path):
            return
        from .stats import CorrelationPair

        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        self.state.correlation_pairs = tuple(
            CorrelationPair(
                p["recon_metric"], p["caption_metric"], p["r"],
                tuple((str(v), float(x), float(y)) for v, x, y in p["points"]),
            )
            for p in obj.get("pairs", ())
        )
        self.state.loo_rows = obj.get("loo", [])
        self.state.guidance_summary = obj.get("guidance")

    # report ----------------------------------------------------------------------

    def _stage_report(self) -> None:
        # reload whatever earlier stages (possibly other processes) produced
        self._load_fidelity_state()
        self._load_caption_state()
        self._load_attention_state()
        self._load_correlate_state()
        self._persist_warnings()
        for msg in self._load_persisted("warnings.json"):
            if msg not in self.state.warnings:
                self.state.warnings.append(msg)
        for msg in self._load_persisted("notes.json"):
            if msg not in self.state.notes:
                self.state.notes.append(msg)
        report_mod.emit_report(self.state, self.reports_root)


def read_variant_table(path) -> dict:
    """Inverse of render_variant_table: variant -> {metric: float}."""
    rows: dict[str, dict] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        for row in reader:
            cells = {}
            for name, raw in zip(header[1:], row[1:]):
                if raw != "":
                    cells[name] = float(raw)
            rows[row[0]] = cells
    return rows


def run_pipeline(config: RunConfig) -> dict:
    """Execute the requested stages in dependency order; returns run info."""
    try:
        run = PipelineRun(config)
    except ManifestError:
        raise
    return run.run()
