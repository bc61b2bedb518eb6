"""Ground-radar ingestion: temporal matching and projection onto SAR grids.

Geometry is spherical (R = 6371 km). Beam elevation is carried on the scan
but does not correct the range.
"""

from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime

import numpy as np
import structlog
from scipy.interpolate import RegularGridInterpolator

from rainsar.config import settings
from rainsar.errors import NoScanInWindow
from rainsar.models import CompositeScan, GeoRaster, PolarScan

log = structlog.get_logger(__name__)

EARTH_RADIUS_KM = 6371.0


def great_circle_km(lat1, lon1, lat2, lon2) -> np.ndarray | float:
    """Haversine distance in km; broadcasts over arrays."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(np.asarray(lon2, dtype=np.float64) - lon1)
    h = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def pixel_polar_coordinates(
    station_lat: float, station_lon: float, lat: np.ndarray, lon: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Azimuth (deg clockwise from north, [0, 360)) and ground range (m) of points seen from a station."""
    p1 = np.radians(station_lat)
    p2 = np.radians(lat)
    dlmb = np.radians(np.asarray(lon, dtype=np.float64) - station_lon)
    y = np.sin(dlmb) * np.cos(p2)
    x = np.cos(p1) * np.sin(p2) - np.sin(p1) * np.cos(p2) * np.cos(dlmb)
    azimuth = np.mod(np.degrees(np.arctan2(y, x)), 360.0)
    rng = great_circle_km(station_lat, station_lon, lat, lon) * 1000.0
    return azimuth, rng


def temporal_match(sar_time: datetime, scans: Sequence[PolarScan], window_s: float = 600.0) -> PolarScan:
    """Scan closest in time to ``sar_time``; on equal distance the earlier scan wins."""
    if not scans:
        raise NoScanInWindow(sar_time, None, window_s)
    ordered = sorted(scans, key=lambda s: s.timestamp)
    deltas = [abs((s.timestamp - sar_time).total_seconds()) for s in ordered]
    best = int(np.argmin(deltas))
    if deltas[best] > window_s:
        raise NoScanInWindow(sar_time, deltas[best], window_s)
    return ordered[best]


def radar_interpolant(scan: PolarScan) -> RegularGridInterpolator:
    """Bilinear interpolant over (azimuth, range) with the 359 -> 0 seam wrapped.

    Missing gates are NaN so any interpolation that touches one is NaN.
    The range axis is padded at 0 m and at the far gate edge with the
    nearest gate values; beyond the last gate edge the result is NaN.
    """
    data = scan.masked_rates()
    n_az, n_rng = data.shape
    az = (np.arange(n_az) + 0.5) * scan.azimuth_width_deg
    rng = (np.arange(n_rng) + 0.5) * scan.gate_spacing_m

    az = np.hstack((az[-1] - 360.0, az, az[0] + 360.0))
    data = np.vstack((data[-1, :], data, data[0, :]))

    rng = np.hstack((0.0, rng, scan.max_range_m))
    data = np.hstack((data[:, :1], data, data[:, -1:]))

    return RegularGridInterpolator((az, rng), data, method="linear", bounds_error=False, fill_value=np.nan)


def _row_bands(rows: int, workers: int) -> list[slice]:
    n = max(1, min(workers, rows))
    edges = np.linspace(0, rows, n + 1).round().astype(int)
    return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _project_bands(target: GeoRaster, sample, workers: int | None) -> np.ndarray:
    """Evaluate ``sample(lat, lon)`` over pixel centers in disjoint row bands."""
    target.check_geotransform()
    workers = workers or settings.workers
    out = np.full(target.shape, np.nan, dtype=np.float64)

    def run(band: slice) -> None:
        lat, lon = target.pixel_centers(band)
        out[band] = sample(lat, lon)

    bands = _row_bands(target.rows, workers)
    if len(bands) == 1:
        run(bands[0])
    else:
        with ThreadPoolExecutor(max_workers=len(bands)) as pool:
            list(pool.map(run, bands))
    return out


def project_polar(scan: PolarScan, target: GeoRaster, workers: int | None = None) -> np.ndarray:
    """Rain rate (mm/h) of ``scan`` at every target pixel center; NaN where missing or out of range."""
    interp = radar_interpolant(scan)

    def sample(lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
        az, rng = pixel_polar_coordinates(scan.station_lat, scan.station_lon, lat, lon)
        return interp(np.stack([az.ravel(), rng.ravel()], axis=-1)).reshape(lat.shape)

    out = _project_bands(target, sample, workers)
    log.debug(
        "polar_projected",
        station=scan.station_id,
        missing_fraction=float(np.isnan(out).mean()),
        shape=target.shape,
    )
    return out


def project_composite(scan: CompositeScan, target: GeoRaster, workers: int | None = None) -> np.ndarray:
    """Bilinear resampling of a composite's ``rain`` channel onto the target grid."""
    scan.check_geotransform()
    rain = scan.channel("rain").astype(np.float64)
    rain = np.where(np.isnan(rain) | (rain < 0), np.nan, rain)
    interp = RegularGridInterpolator(
        (np.arange(scan.rows) + 0.5, np.arange(scan.cols) + 0.5),
        rain,
        method="linear",
        bounds_error=False,
        fill_value=np.nan,
    )

    def sample(lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
        row, col = scan.lonlat_to_pixel(lat, lon)
        return interp(np.stack([row.ravel(), col.ravel()], axis=-1)).reshape(lat.shape)

    return _project_bands(target, sample, workers)


def range_mask(target: GeoRaster, station_lat: float, station_lon: float, max_km: float) -> np.ndarray:
    """True where the pixel center lies within ``max_km`` great-circle km of the station."""
    if max_km < 0:
        raise ValueError("max_km must be >= 0")
    lat, lon = target.pixel_centers()
    return great_circle_km(station_lat, station_lon, lat, lon) <= max_km


def nearest_station_scans(scans: Sequence[PolarScan], lat: float, lon: float) -> list[PolarScan]:
    """Scans of the station closest to (lat, lon), sorted by time."""
    if not scans:
        return []
    by_station: dict[tuple[str, float, float], list[PolarScan]] = {}
    for s in scans:
        by_station.setdefault((s.station_id, s.station_lat, s.station_lon), []).append(s)
    key = min(by_station, key=lambda k: (float(great_circle_km(lat, lon, k[1], k[2])), k[0]))
    return sorted(by_station[key], key=lambda s: s.timestamp)
