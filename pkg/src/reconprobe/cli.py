"""Manifest-driven command line entry point.

Subcommands run single stages (degrade, fidelity, captions, attention,
correlate, report) or the whole pipeline (run). Exit codes: 0 success,
2 manifest/validation error, 3 missing interchange input, 4 stage failure.
RECONPROBE_THREADS caps per-record parallelism.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ManifestError, MissingInputError, StageError
from .pipeline import STAGES, RunConfig, run_pipeline

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_MISSING_INPUT = 3
EXIT_STAGE_FAILURE = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reconprobe",
        description="Degrade images, score region fidelity and captions, track "
                    "attention drift, and emit correlation/robustness reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--manifest", required=True, help="path to the run manifest JSON")
        p.add_argument("--out", default=None, help="report directory (overrides io_roots.reports)")
        p.add_argument("--tvd-halved", action="store_true",
                       help="halve attention TVD (range [0,1] instead of [0,2])")
        p.add_argument("--bleu-candidate", choices=("first", "max"), default="first",
                       help="which generated candidate lexical metrics score")
        p.add_argument("--patch-threshold", type=float, default=0.5,
                       help="masked-pixel fraction for a patch to count as inpainted")
        p.add_argument("--seed", type=int, default=None, help="degradation RNG seed override")
        p.add_argument("--force", action="store_true", help="re-run stages even if outputs are current")

    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run only the {stage} stage")
        add_common(p)

    p = sub.add_parser("run", help="run all stages (or --stages subset) in order")
    add_common(p)
    p.add_argument("--stages", default=",".join(STAGES),
                   help="comma-separated subset of: " + ", ".join(STAGES))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        stages = tuple(s.strip() for s in args.stages.split(",") if s.strip())
        explicit = args.stages != ",".join(STAGES)
    else:
        stages = (args.command,)
        explicit = True
    try:
        config = RunConfig(
            manifest_path=args.manifest,
            out_root=args.out,
            stages=stages,
            tvd_halved=args.tvd_halved,
            bleu_candidate=args.bleu_candidate,
            patch_threshold=args.patch_threshold,
            seed=args.seed,
            force=args.force,
            stages_explicit=explicit,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        info = run_pipeline(config)
    except ManifestError as exc:
        print(f"manifest error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except MissingInputError as exc:
        print(f"missing interchange input: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (StageError, ValueError) as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE_FAILURE
    print(f"reports: {info['reports_root']}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
