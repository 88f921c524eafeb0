import json

import numpy as np
import pytest
from PIL import Image

from reconprobe.errors import ManifestError
from reconprobe.manifest import (
    DatasetRecord,
    RegionSpec,
    load_manifest,
    parse_manifest,
    resolve_region,
    validate_manifest,
)
from reconprobe.raster import ImageRaster, MaskRaster, load_image, load_mask, save_image, save_mask


def write_ppm(path, width, height, value=255):
    header = f"P6\n{width} {height}\n255\n".encode()
    path.write_bytes(header + bytes([value] * (width * height * 3)))


def make_record(region, rid="r1", path="x.png"):
    return DatasetRecord(id=rid, original_image=path, region=region)


class TestLoadImage:
    def test_white_ppm_byte_scale(self, tmp_path):
        p = tmp_path / "white.ppm"
        write_ppm(p, 2, 2, 255)
        raster = load_image(p, scale="byte")
        assert raster.height == 2 and raster.width == 2 and raster.channels == 3
        assert np.array_equal(raster.pixels, np.full((2, 2, 3), 255.0))

    def test_white_ppm_unit_scale(self, tmp_path):
        p = tmp_path / "white.ppm"
        write_ppm(p, 2, 2, 255)
        raster = load_image(p, scale="unit")
        assert np.array_equal(raster.pixels, np.full((2, 2, 3), 1.0))

    def test_truncated_file_is_unreadable(self, tmp_path):
        p = tmp_path / "broken.png"
        good = tmp_path / "good.png"
        Image.fromarray(np.zeros((8, 8, 3), dtype=np.uint8)).save(good)
        p.write_bytes(good.read_bytes()[:20])
        with pytest.raises(ValueError, match="unreadable file"):
            load_image(p)

    def test_16bit_png_rejected(self, tmp_path):
        p = tmp_path / "deep.png"
        Image.fromarray(np.zeros((4, 4), dtype=np.uint16)).save(p)
        with pytest.raises(ValueError, match="bit depth"):
            load_image(p)

    def test_rgba_rejected(self, tmp_path):
        p = tmp_path / "rgba.png"
        Image.fromarray(np.zeros((4, 4, 4), dtype=np.uint8), mode="RGBA").save(p)
        with pytest.raises(ValueError, match="channel count"):
            load_image(p)

    def test_unsupported_format(self, tmp_path):
        with pytest.raises(ValueError, match="unsupported image format"):
            load_image(tmp_path / "image.jpg")

    @pytest.mark.parametrize("suffix", [".png", ".ppm"])
    @pytest.mark.parametrize("scale", ["byte", "unit"])
    def test_round_trip_bit_identical(self, tmp_path, suffix, scale):
        rng = np.random.default_rng(7)
        arr = rng.integers(0, 256, size=(16, 20, 3), dtype=np.uint8)
        src = tmp_path / "src.png"
        Image.fromarray(arr).save(src)
        first = load_image(src, scale)
        dst = tmp_path / ("copy" + suffix)
        save_image(first, dst)
        second = load_image(dst, scale)
        assert np.array_equal(first.pixels, second.pixels)


class TestRasterInvariants:
    def test_values_must_fit_scale(self):
        with pytest.raises(ValueError, match="outside declared"):
            ImageRaster(2, 2, 1, np.full((2, 2, 1), 2.0), "unit")

    def test_channel_count(self):
        with pytest.raises(ValueError, match="channel count"):
            ImageRaster(2, 2, 2, np.zeros((2, 2, 2)), "unit")

    def test_mask_needs_set_bits(self):
        with pytest.raises(ValueError, match="no set bits"):
            MaskRaster(2, 2, np.zeros((2, 2), dtype=np.uint8))

    def test_mask_round_trip(self, tmp_path):
        bits = np.zeros((6, 6), dtype=np.uint8)
        bits[2:4, 1:5] = 1
        mask = MaskRaster(6, 6, bits)
        save_mask(mask, tmp_path / "m.png")
        again = load_mask(tmp_path / "m.png")
        assert np.array_equal(mask.bits, again.bits)


class TestResolveRegion:
    def _image(self, h=100, w=100):
        return ImageRaster(h, w, 1, np.zeros((h, w, 1)), "unit")

    def test_center_box_geometry(self):
        # side fraction 0.5 (area 0.25) on 100x100 covers rows/cols 25..74
        mask = resolve_region(
            make_record(RegionSpec("center_box", area_fraction=0.25)), self._image()
        )
        assert mask.count == 2500
        assert mask.bounding_box() == (25, 25, 75, 75)

    def test_temporal_band_rounding_rule(self):
        # floor(0.375 * 100) = 37 start, round(0.25 * 100) = 25 columns wide
        mask = resolve_region(
            make_record(RegionSpec("temporal_band", start_fraction=0.375,
                                   length_fraction=0.25)),
            self._image(),
        )
        assert mask.count == round(0.25 * 100) * 100
        r0, c0, r1, c1 = mask.bounding_box()
        assert (r0, r1) == (0, 100)
        assert (c0, c1) == (37, 62)  # columns 37..61 inclusive

    def test_bbox_identity(self):
        mask = resolve_region(
            make_record(RegionSpec("bbox", bbox=(10, 10, 20, 20))), self._image()
        )
        assert mask.count == 100

    def test_bbox_out_of_bounds(self):
        with pytest.raises(ValueError, match="out of bounds"):
            resolve_region(
                make_record(RegionSpec("bbox", bbox=(90, 90, 120, 120))), self._image()
            )

    def test_degenerate_bbox(self):
        with pytest.raises(ValueError, match="degenerate|out of bounds"):
            resolve_region(
                make_record(RegionSpec("bbox", bbox=(10, 10, 10, 20))), self._image()
            )

    def test_deterministic(self):
        rec = make_record(RegionSpec("center_box", area_fraction=0.3))
        a = resolve_region(rec, self._image(73, 41))
        b = resolve_region(rec, self._image(73, 41))
        assert np.array_equal(a.bits, b.bits)

    def test_center_area_within_one_row_or_column(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            h = int(rng.integers(16, 200))
            w = int(rng.integers(16, 200))
            f = float(rng.uniform(0.05, 0.9))
            mask = resolve_region(
                make_record(RegionSpec("center_box", area_fraction=f)), self._image(h, w)
            )
            # within one row plus one column of the requested area
            slack = (w + h) / (h * w)
            assert abs(mask.count / (h * w) - f) <= slack


class TestValidateManifest:
    def _manifest_obj(self, tmp_path, ids=("a", "b")):
        img = tmp_path / "img.png"
        Image.fromarray(np.zeros((32, 32, 3), dtype=np.uint8)).save(img)
        return {
            "records": [
                {"id": rid, "original_image": str(img),
                 "region": {"kind": "center_box"}, "references": ["a cat"]}
                for rid in ids
            ],
            "variants": ["SD1.5-cm"],
            "settings": {},
            "io_roots": {},
        }

    def test_duplicate_id(self, tmp_path):
        obj = self._manifest_obj(tmp_path, ids=("a", "a"))
        with pytest.raises(ManifestError, match="duplicate id"):
            validate_manifest(parse_manifest(obj, str(tmp_path)))

    def test_defaults_filled(self, tmp_path):
        obj = self._manifest_obj(tmp_path)
        validated = validate_manifest(parse_manifest(obj, str(tmp_path)))
        assert validated.records[0].region.area_fraction == 0.25
        assert validated.settings["inpaint"]["steps"] == 50
        assert validated.settings["decode"]["beams"] == 6

    def test_nine_variant_grid_accepted(self, tmp_path):
        obj = self._manifest_obj(tmp_path)
        obj["variants"] = [
            f"{model}-{strategy}"
            for model in ("SD1.5", "SD2", "SD3")
            for strategy in ("cm", "gc", "ld")
        ]
        validated = validate_manifest(parse_manifest(obj, str(tmp_path)))
        assert len(validated.variants) == 9

    def test_unknown_variant_scheme(self, tmp_path):
        obj = self._manifest_obj(tmp_path)
        obj["variants"] = ["SD1.5-zz"]
        with pytest.raises(ManifestError, match="unknown variant tag scheme"):
            validate_manifest(parse_manifest(obj, str(tmp_path)))

    def test_missing_file(self, tmp_path):
        obj = self._manifest_obj(tmp_path)
        obj["records"][0]["original_image"] = str(tmp_path / "absent.png")
        with pytest.raises(ManifestError, match="missing file"):
            validate_manifest(parse_manifest(obj, str(tmp_path)))

    def test_small_image_rejected(self, tmp_path):
        small = tmp_path / "small.png"
        Image.fromarray(np.zeros((8, 8, 3), dtype=np.uint8)).save(small)
        obj = self._manifest_obj(tmp_path)
        obj["records"][0]["original_image"] = str(small)
        with pytest.raises(ManifestError, match="at least 16x16"):
            validate_manifest(parse_manifest(obj, str(tmp_path)))

    def test_load_manifest_from_file(self, tmp_path):
        obj = self._manifest_obj(tmp_path)
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps(obj))
        validated = load_manifest(path)
        assert len(validated.records) == 2

    def test_duplicate_variant(self, tmp_path):
        obj = self._manifest_obj(tmp_path)
        obj["variants"] = ["SD2-cm", "SD2-cm"]
        with pytest.raises(ManifestError, match="duplicate variant"):
            validate_manifest(parse_manifest(obj, str(tmp_path)))
