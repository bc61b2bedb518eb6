"""Tests for SAR / radar collocation."""

import json
from datetime import timedelta

import numpy as np
import pytest

from rainsar.config import CollocationConfig
from rainsar.errors import DataError, NoScanInWindow
from rainsar.models import PolarScan
from rainsar.services import containers
from rainsar.services.collocation import collocate, collocate_raster
from tests.conftest import T0, make_raster


def sar_raster(iw_id: str, t=T0):
    shape = (20, 20)
    r = make_raster(
        rows=20,
        cols=20,
        channels={
            "sigma0_vv": np.full(shape, 0.05, dtype=np.float32),
            "sigma0_vh": np.full(shape, 0.002, dtype=np.float32),
            "incidence": np.full(shape, 35.0, dtype=np.float32),
            "land_mask": np.ones(shape, dtype=np.float32),
            "nesz": np.full(shape, -25.0, dtype=np.float32),
            "wind": np.full(shape, 7.0, dtype=np.float32),
        },
        iw_id=iw_id,
    )
    return r.model_copy(update={"timestamp": t})


def scan(t, value=6.0, station=(29.9, -79.9), station_id="KAMX"):
    return PolarScan(
        station_id=station_id,
        station_lat=station[0],
        station_lon=station[1],
        timestamp=t,
        rates=np.full((360, 60), value),
        gate_spacing_m=1000.0,
    )


def test_collocate_raster_adds_rain_and_ssr():
    out = collocate_raster(sar_raster("IW1"), [scan(T0 + timedelta(seconds=120))], [], CollocationConfig())
    np.testing.assert_allclose(out.channel("rain"), 6.0, atol=1e-5)
    assert {"ssr_vv", "ssr_vh", "sigma0_vv", "land_mask"} <= set(out.channels)
    assert out.metadata["station_id"] == "KAMX"
    assert float(out.metadata["station_lat"]) == 29.9
    assert out.metadata["rain_source"] == "polar"


def test_collocate_raster_errors():
    with pytest.raises(NoScanInWindow):
        collocate_raster(sar_raster("IW1"), [scan(T0 + timedelta(hours=1))], [], CollocationConfig())
    with pytest.raises(NoScanInWindow):
        collocate_raster(sar_raster("IW1"), [], [], CollocationConfig())
    far = scan(T0, station=(40.0, -80.0))
    with pytest.raises(DataError):
        collocate_raster(sar_raster("IW1"), [far], [], CollocationConfig(max_station_km=100.0))
    bare = make_raster(rows=5, cols=5)
    with pytest.raises(DataError):
        collocate_raster(bare, [scan(T0)], [], CollocationConfig())


def test_collocate_directory_writes_matches_and_skip_log(tmp_path):
    sar_dir, radar_dir, out_dir = tmp_path / "sar", tmp_path / "radar", tmp_path / "out"
    for i, t in enumerate([T0, T0 + timedelta(hours=1), T0 + timedelta(hours=5)]):
        containers.write_geo_raster(sar_dir / f"s{i}.rsgeo", sar_raster(f"IW{i}", t))
    for i, t in enumerate([T0 + timedelta(seconds=60), T0 + timedelta(hours=1, seconds=-90)]):
        containers.write_polar_scan(radar_dir / f"r{i}.rspol", scan(t))

    result = collocate(sar_dir, radar_dir, out_dir)
    assert result["written"] == ["IW0.rsgeo", "IW1.rsgeo"]
    assert len(result["skipped"]) == 1
    skipped = json.loads((out_dir / "skipped.json").read_text())
    assert skipped[0]["input"] == "s2.rsgeo"
    assert skipped[0]["reason"] == "NoScanInWindow"
    back = containers.read_geo_raster(out_dir / "IW0.rsgeo")
    assert "rain" in back.channels


def test_collocate_empty_radar_dir_skips_everything(tmp_path):
    sar_dir, radar_dir = tmp_path / "sar", tmp_path / "radar"
    radar_dir.mkdir()
    containers.write_geo_raster(sar_dir / "s0.rsgeo", sar_raster("IW0"))
    result = collocate(sar_dir, radar_dir, tmp_path / "out")
    assert result["written"] == []
    assert [s["input"] for s in result["skipped"]] == ["s0.rsgeo"]


def test_collocate_missing_directory(tmp_path):
    with pytest.raises(DataError):
        collocate(tmp_path / "nope", tmp_path, tmp_path / "out")
