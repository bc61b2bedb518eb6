"""Tests for patch extraction, labeling, capping and manifest building."""

import numpy as np
import pytest

from rainsar.config import DatasetConfig
from rainsar.errors import RasterTooSmall
from rainsar.models import DatasetManifest
from rainsar.services import containers
from rainsar.services.dataset import (
    build_dataset,
    cap_rainless,
    class_table,
    extract_patches,
    label_patch,
    load_patch,
    patch_origins,
    patch_size_px,
    wind_class,
    wind_histogram,
)
from tests.conftest import collocated_raster, make_record


def test_patch_grid_of_a_full_iw():
    assert patch_size_px(200.0, 25.0) == 125
    rows = patch_origins(1250, 200.0, 25.0, 12.5)
    cols = patch_origins(900, 200.0, 25.0, 12.5)
    assert len(rows) * len(cols) == 19 * 13 == 247
    assert rows[-1] + 125 <= 1250
    assert cols[-1] + 125 <= 900
    assert patch_origins(100, 200.0, 25.0, 12.5) == []


def test_label_patch_area_rule():
    rain = np.zeros((10, 10))
    rain.flat[:5] = 4.0
    assert label_patch(rain, 5.0) == (False, 1, 1)
    rain.flat[5] = 4.0
    assert label_patch(rain, 5.0) == (True, 1, 6)
    rain.flat[:] = 3.0
    assert label_patch(rain, 5.0)[0] is False
    rain.flat[:] = np.nan
    assert label_patch(rain, 5.0)[0] is False


def test_label_patch_uses_ocean_denominator():
    rain = np.zeros((10, 10))
    land = np.zeros((10, 10))
    land[:5] = 1
    rain[0, :3] = 10.0
    assert label_patch(rain, 1.0, land)[0] is True
    assert label_patch(rain, 1.0)[0] is False
    assert label_patch(rain, 1.0, np.zeros((10, 10)))[0] is False


def test_wind_class_boundaries():
    assert [wind_class(w) for w in (0.0, 1.99, 2.0, 5.9, 6.0, 10.0, 14.9, 15.0, 30.0)] == [0, 0, 1, 1, 2, 3, 3, 4, 4]


def test_extract_patches_grid_and_station_filter():
    raster = collocated_raster(iw_id="IW7", station_id="KAMX", processing_version="003.52")
    records = extract_patches(raster, size_km=10.0, stride_km=5.0)
    assert len(records) == 25
    assert {r.size_px for r in records} == {20}
    assert records[0].iw_id == "IW7"
    assert records[0].processing_version == "003.52"
    assert all(r.class_id == 2 and not r.rain_flag for r in records)

    lat, lon = raster.pixel_to_lonlat(10.0, 10.0)
    near = extract_patches(raster, 10.0, 5.0, station=(float(lat), float(lon)), max_km=1.0)
    assert [(r.row, r.col) for r in near] == [(0, 0)]
    assert near[0].station_distance_km < 1e-6


def test_extract_patches_rain_and_land():
    rain = np.zeros((60, 60), dtype=np.float32)
    rain[:10, :10] = 20.0
    rain[15, 15] = np.nan
    land = np.ones((60, 60), dtype=np.float32)
    land[40:, 40:] = 0.0
    records = extract_patches(collocated_raster(rain=rain, land=land), 10.0, 5.0)
    by_origin = {(r.row, r.col): r for r in records}
    assert (40, 40) not in by_origin
    assert by_origin[(0, 0)].rain_flag
    assert by_origin[(0, 0)].max_rain == pytest.approx(20.0)
    assert by_origin[(0, 0)].missing_fraction == pytest.approx(1 / 400)
    assert not by_origin[(20, 20)].rain_flag


def test_extract_patches_all_land_and_too_small():
    assert extract_patches(collocated_raster(land=np.zeros((60, 60), dtype=np.float32)), 10.0, 5.0) == []
    with pytest.raises(RasterTooSmall):
        extract_patches(collocated_raster(rows=10, cols=10), 10.0, 5.0)


def test_cap_rainless_keeps_rain_and_order():
    dry_a = [make_record(f"A{i}", class_id=1, wind=3.2) for i in range(100)]
    dry_b = [make_record(f"B{i}", class_id=3, wind=12.1) for i in range(10)]
    wet_b = [make_record(f"W{i}", class_id=8, wind=12.3) for i in range(5)]
    records = dry_a + wet_b + dry_b
    kept = cap_rainless(records, bin_width=0.5, cap_fraction=0.2, seed=0)
    assert sum(r.iw_id.startswith("A") for r in kept) == 20
    assert sum(r.iw_id.startswith("B") for r in kept) == 10
    assert sum(r.rain_flag for r in kept) == 5
    positions = [records.index(r) for r in kept]
    assert positions == sorted(positions)
    assert cap_rainless(records, seed=0) == kept
    assert wind_histogram(records) == {"3": 100, "12": 15}


def test_class_table_counts_by_subset():
    records = [make_record("IW0", 0), make_record("IW0", 5), make_record("IW1", 9)]
    manifest = DatasetManifest(records=records, split={"IW0": "train", "IW1": "test"})
    table = class_table(manifest)
    assert table["train"][0] == 1 and table["train"][5] == 1
    assert table["test"][9] == 1
    assert sum(table["all"]) == 3
    assert sum(table["val"]) == 0


def test_load_patch_resamples_to_model_grid(tmp_path):
    rain = np.full((60, 60), np.nan, dtype=np.float32)
    rain[:20, :20] = 5.0
    path = containers.write_geo_raster(tmp_path / "r.rsgeo", collocated_raster(rain=rain))
    rec = make_record(raster_path=str(path), size_px=20, row=20, col=0)
    arrays = load_patch(rec)
    assert arrays["image"].shape == (3, 20, 20)
    assert np.all(arrays["rain"] == 0.0)
    np.testing.assert_array_equal(arrays["scalars"], [35.0, -25.0, 1.0])

    rec = make_record(raster_path=str(path), size_px=20)
    small = load_patch(rec, input_px=10)
    assert small["image"].shape == (3, 10, 10)
    np.testing.assert_allclose(small["rain"], 5.0)
    assert set(np.unique(small["mask"])) == {1.0}


def test_build_dataset_from_directory(tmp_path):
    src = tmp_path / "collocated"
    for i in range(4):
        rain = np.zeros((60, 60), dtype=np.float32)
        rain[: 10 * (i + 1), :20] = 12.0
        containers.write_geo_raster(src / f"IW{i}.rsgeo", collocated_raster(rain=rain, wind=3.0 + 4 * i, iw_id=f"IW{i}"))
    cfg = DatasetConfig(patch_km=10.0, stride_km=5.0, cap_fraction=1.0)
    manifest = build_dataset(src, tmp_path / "out" / "manifest.json", cfg, seed=0)
    assert len(manifest.records) == 100
    assert manifest.is_leak_free()
    assert set(manifest.split) == {"IW0", "IW1", "IW2", "IW3"}
    assert set(manifest.config["raster_sha256"]) == {f"IW{i}.rsgeo" for i in range(4)}
    loaded = DatasetManifest.load(tmp_path / "out" / "manifest.json")
    assert loaded.split == manifest.split
    assert len(loaded.records) == len(manifest.records)
