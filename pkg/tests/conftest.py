"""Shared fixtures: small rasters, scans, patch records and a tiny model configuration."""

from datetime import datetime, timezone

import numpy as np
import pytest

from rainsar.models import GeoRaster, ModelConfig, PatchRecord, PolarScan

T0 = datetime(2022, 6, 1, 12, 0, tzinfo=timezone.utc)


def make_raster(rows=40, cols=50, resolution_m=1000.0, lat0=30.0, lon0=-80.0, channels=None, **metadata):
    """North-up raster whose top-left corner sits at (lat0, lon0)."""
    d = resolution_m / 111_195.0
    g = (lon0, d, 0.0, lat0, 0.0, -d)
    if channels is None:
        channels = {"land_mask": np.ones((rows, cols), dtype=np.float32)}
    return GeoRaster(
        resolution_m=resolution_m,
        geotransform=g,
        channels=channels,
        timestamp=T0,
        metadata={k: str(v) for k, v in metadata.items()},
    )


def collocated_raster(rows=60, cols=60, wind=7.0, rain=None, land=None, **metadata):
    """500 m raster carrying every channel the dataset builder reads."""
    shape = (rows, cols)
    channels = {
        "ssr_vv": np.ones(shape, dtype=np.float32),
        "ssr_vh": np.ones(shape, dtype=np.float32),
        "land_mask": np.ones(shape, dtype=np.float32) if land is None else land,
        "incidence": np.full(shape, 35.0, dtype=np.float32),
        "nesz": np.full(shape, -25.0, dtype=np.float32),
        "wind": np.full(shape, wind, dtype=np.float32),
        "rain": np.zeros(shape, dtype=np.float32) if rain is None else rain,
    }
    return make_raster(rows=rows, cols=cols, resolution_m=500.0, channels=channels, **metadata)


def make_record(iw_id="IW0", class_id=0, wind=1.0, row=0, col=0, **kw) -> PatchRecord:
    wind_class = class_id % 5
    fields = dict(
        iw_id=iw_id,
        row=row,
        col=col,
        size_px=16,
        center_lat=30.0,
        center_lon=-80.0,
        incidence=35.0,
        nesz=-25.0,
        wind_prior=wind,
        wind_max=wind,
        rain_flag=class_id >= 5,
        wind_class=wind_class,
        class_id=class_id,
    )
    fields.update(kw)
    return PatchRecord(**fields)


@pytest.fixture
def raster():
    return make_raster()


@pytest.fixture
def polar_scan():
    rates = np.tile(np.linspace(0.0, 10.0, 80), (360, 1))
    return PolarScan(
        station_id="KAMX",
        station_lat=29.8,
        station_lon=-79.8,
        timestamp=T0,
        rates=rates,
        azimuth_width_deg=1.0,
        gate_spacing_m=1000.0,
    )


@pytest.fixture
def tiny_cfg():
    return ModelConfig(depth=1, base_channels=2, input_px=8, discriminator_widths=(2,))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
