import json
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

sys.path.insert(0, str(Path(__file__).parent))

TOY_VARIANTS = ("SD1.5-cm", "SD1.5-gc", "SD2-cm", "SD3-ld")

RECORDS = {
    "t0": ["a man in a blue shirt rides a bike", "a cyclist wearing blue"],
    "t1": ["a brown cow stands in a green field", "one cow grazing on grass"],
    "t2": ["a small plane flies over the water", "an airplane above the sea"],
}


@pytest.fixture
def toy_manifest(tmp_path):
    """3-record toy manifest with deterministic images; no interchange yet."""
    images = tmp_path / "images"
    images.mkdir()
    records = []
    for i, (record_id, refs) in enumerate(RECORDS.items()):
        rng = np.random.default_rng(1000 + i)
        arr = (rng.random((32, 32, 3)) * 255).astype(np.uint8)
        path = images / f"{record_id}.png"
        Image.fromarray(arr, mode="RGB").save(path)
        records.append({
            "id": record_id,
            "original_image": str(path),
            "region": {"kind": "center_box", "area_fraction": 0.25},
            "references": refs,
            "dataset_tag": "toy",
            "prompt": refs[0],
        })
    manifest = {
        "records": records,
        "variants": list(TOY_VARIANTS),
        "settings": {"scale": "unit"},
        "io_roots": {
            "images": str(images),
            "interchange": str(tmp_path / "interchange"),
            "reports": str(tmp_path / "report"),
        },
    }
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return str(path)
