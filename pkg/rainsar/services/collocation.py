"""Pair SAR rasters with ground-radar observations and write collocated containers."""

import json
from pathlib import Path

import numpy as np
import structlog

from rainsar.config import CollocationConfig, GmfConfig
from rainsar.errors import DataError, NoScanInWindow
from rainsar.models import GeoRaster
from rainsar.services import containers
from rainsar.services.gmf import load_gmf, normalize_raster
from rainsar.services.radar_ingest import (
    great_circle_km,
    nearest_station_scans,
    project_composite,
    project_polar,
    temporal_match,
)

log = structlog.get_logger(__name__)

SAR_CHANNELS = ("sigma0_vv", "sigma0_vh", "incidence", "land_mask")


def scene_center(raster: GeoRaster) -> tuple[float, float]:
    lat, lon = raster.pixel_to_lonlat(raster.rows / 2.0, raster.cols / 2.0)
    return float(lat), float(lon)


def collocate_raster(
    raster: GeoRaster,
    polar_scans: list,
    composites: list,
    cfg: CollocationConfig,
    gmf_cfg: GmfConfig | None = None,
    workers: int | None = None,
) -> GeoRaster:
    """Attach a projected ``rain`` channel and SSR channels to one SAR raster."""
    missing = [c for c in SAR_CHANNELS if c not in raster.channels]
    if missing:
        raise DataError(f"SAR raster lacks channels {missing}")
    gmf_cfg = gmf_cfg or GmfConfig()
    lat, lon = scene_center(raster)
    meta = dict(raster.metadata)

    candidates = nearest_station_scans(polar_scans, lat, lon)
    if candidates:
        scan = temporal_match(raster.timestamp, candidates, cfg.window_s)
        distance = float(great_circle_km(lat, lon, scan.station_lat, scan.station_lon))
        if distance > cfg.max_station_km:
            raise DataError(
                f"Nearest station {scan.station_id} is {distance:.1f} km from the scene center "
                f"(limit {cfg.max_station_km} km)"
            )
        rain = project_polar(scan, raster, workers)
        meta.update(
            station_id=scan.station_id,
            station_lat=repr(scan.station_lat),
            station_lon=repr(scan.station_lon),
            radar_time=scan.timestamp.isoformat(),
            rain_source="polar",
        )
    elif composites:
        comp = temporal_match(raster.timestamp, sorted(composites, key=lambda c: c.timestamp), cfg.window_s)
        rain = project_composite(comp, raster, workers)
        meta.update(radar_time=comp.timestamp.isoformat(), rain_source="composite")
    else:
        raise NoScanInWindow(raster.timestamp, None, cfg.window_s)

    out = normalize_raster(raster, load_gmf(gmf_cfg.vv_file), load_gmf(gmf_cfg.vh_file))
    channels = dict(out.channels)
    channels["rain"] = rain.astype(np.float32)
    return out.model_copy(update={"channels": channels, "metadata": meta})


def collocate(
    sar_dir: str | Path,
    radar_dir: str | Path,
    out_dir: str | Path,
    cfg: CollocationConfig | None = None,
    gmf_cfg: GmfConfig | None = None,
    workers: int | None = None,
) -> dict:
    """Collocate every SAR raster of a directory; unmatched inputs go to ``skipped.json``."""
    cfg = cfg or CollocationConfig()
    sar_dir, radar_dir, out_dir = Path(sar_dir), Path(radar_dir), Path(out_dir)
    for d in (sar_dir, radar_dir):
        if not d.is_dir():
            raise DataError(f"Input directory does not exist: {d}")
    out_dir.mkdir(parents=True, exist_ok=True)

    polar = [containers.read_polar_scan(p) for p in containers.list_containers(radar_dir, "polar_scan")]
    composites = [containers.read_geo_raster(p) for p in containers.list_containers(radar_dir, "composite_scan")]
    log.info("collocation_started", sar_dir=str(sar_dir), polar_scans=len(polar), composites=len(composites))

    written: list[str] = []
    skipped: list[dict[str, str]] = []
    for path in containers.list_containers(sar_dir, "geo_raster"):
        try:
            raster = containers.read_geo_raster(path)
            result = collocate_raster(raster, polar, composites, cfg, gmf_cfg, workers)
        except DataError as e:
            skipped.append({"input": path.name, "reason": type(e).__name__, "detail": str(e)})
            log.warning("scan_skipped", input=path.name, reason=type(e).__name__)
            continue
        iw_id = result.metadata.get("iw_id") or path.stem
        target = out_dir / f"{iw_id}{containers.EXTENSIONS['geo_raster']}"
        containers.write_geo_raster(target, result)
        written.append(target.name)

    (out_dir / "skipped.json").write_text(json.dumps(skipped, indent=1), encoding="utf-8")
    log.info("collocation_completed", written=len(written), skipped=len(skipped))
    return {"written": written, "skipped": skipped}
