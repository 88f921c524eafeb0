"""Shared helpers for driving the runners and the core pipeline."""

import hashlib
import json
import os
import subprocess
import sys

from conftest import TOY_VARIANTS
from recon_runners.cli import (
    main_caption,
    main_embed,
    main_inpaint,
    main_lpips,
    main_vit,
)


def run_core(manifest: str, *args: str) -> subprocess.CompletedProcess:
    """Invoke the core pipeline CLI as a real subprocess (interface boundary)."""
    return subprocess.run(
        [sys.executable, "-m", "reconprobe.cli", *args, "--manifest", manifest],
        capture_output=True, text=True,
    )


def run_all_runners(manifest: str, variants=TOY_VARIANTS) -> None:
    for variant in variants:
        assert main_inpaint(["--manifest", manifest, "--variant", variant]) == 0
        assert main_lpips(["--manifest", manifest, "--variant", variant]) == 0
    for variant in ("orig",) + tuple(variants):
        assert main_caption(["--manifest", manifest, "--variant", variant]) == 0
        assert main_embed(["--manifest", manifest, "--variant", variant]) == 0
        assert main_vit(["--manifest", manifest, "--variant", variant]) == 0


def manifest_roots(manifest: str) -> dict:
    with open(manifest, encoding="utf-8") as fh:
        return json.load(fh)["io_roots"]


def hash_tree(path: str) -> dict:
    out = {}
    for dirpath, _, names in os.walk(path):
        for name in names:
            full = os.path.join(dirpath, name)
            rel = os.path.relpath(full, path)
            out[rel] = hashlib.sha256(open(full, "rb").read()).hexdigest()
    return out
