"""Procedural SAR/rain scenes with known ground truth.

A scene is a regular lat/lon grid holding Gaussian rain cells over a wind
field. Backscatter is the GMF wind response roughened by rain (tanh
coupling, VV damped above the saturation wind) with a VH noise floor. The
rain delivered as ground truth is the true field shifted by a random
misalignment vector.
"""

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import timedelta
from pathlib import Path

import numpy as np
import structlog
from scipy import ndimage

from rainsar.config import DatasetConfig, settings
from rainsar.models import DatasetManifest, GeoRaster, PolarScan, SceneParams
from rainsar.services import containers
from rainsar.services.dataset import assemble_manifest, build_records, cap_rainless, wind_histogram
from rainsar.services.gmf import REFERENCE_DIRECTION, cmod2pol, cmod5n, normalize_raster
from rainsar.services.radar_ingest import EARTH_RADIUS_KM, great_circle_km

log = structlog.get_logger(__name__)

KM_PER_DEG = 2 * math.pi * EARTH_RADIUS_KM / 360.0
SAR_ONLY = ("sigma0_vv", "sigma0_vh", "incidence", "land_mask", "nesz", "wind")


@dataclass
class SyntheticScene:
    raster: GeoRaster  # SAR, SSR, auxiliary and ground-truth channels
    truth: np.ndarray  # rain before misalignment, mm/h
    groundtruth: np.ndarray  # rain as delivered, mm/h
    wind: np.ndarray
    station: tuple[float, float]
    shift_km: tuple[float, float]


def scene_geotransform(p: SceneParams) -> tuple[float, float, float, float, float, float]:
    dlat = p.resolution_m / 1000.0 / KM_PER_DEG
    dlon = dlat / math.cos(math.radians(p.center_lat))
    return (
        p.center_lon - p.cols / 2.0 * dlon,
        dlon,
        0.0,
        p.center_lat + p.rows / 2.0 * dlat,
        0.0,
        -dlat,
    )


def _rain_cells(p: SceneParams, rng: np.random.Generator, y_km: np.ndarray, x_km: np.ndarray) -> np.ndarray:
    rain = np.zeros(y_km.shape)
    n = int(rng.integers(p.n_cells[0], p.n_cells[1] + 1))
    for _ in range(n):
        cy = rng.uniform(0, y_km.max())
        cx = rng.uniform(0, x_km.max())
        amp = rng.uniform(*p.amplitude_mmh)
        radius = rng.uniform(*p.radius_km)
        rain += amp * np.exp(-((y_km - cy) ** 2 + (x_km - cx) ** 2) / (2.0 * radius**2))
    return rain


def _land_mask(p: SceneParams, rng: np.random.Generator, y_km: np.ndarray, x_km: np.ndarray) -> np.ndarray:
    mask = np.ones(y_km.shape, dtype=np.float32)
    if rng.random() < p.land_probability:
        cy = rng.uniform(0, y_km.max())
        cx = rng.uniform(0, x_km.max())
        radius = rng.uniform(*p.land_radius_km)
        mask[(y_km - cy) ** 2 + (x_km - cx) ** 2 <= radius**2] = 0.0
    return mask


def _misalign(truth: np.ndarray, p: SceneParams, rng: np.random.Generator) -> tuple[np.ndarray, tuple[float, float]]:
    magnitude = rng.uniform(*p.jitter_km)
    angle = rng.uniform(0.0, 2.0 * math.pi)
    if magnitude == 0.0:
        return truth.copy(), (0.0, 0.0)
    dy, dx = magnitude * math.sin(angle), magnitude * math.cos(angle)
    px = 1000.0 / p.resolution_m
    shifted = ndimage.shift(truth, (dy * px, dx * px), order=1, mode="constant", cval=0.0)
    return np.maximum(shifted, 0.0), (dy, dx)


def station_location(p: SceneParams) -> tuple[float, float]:
    """Station at ``station_offset_km`` (north, east) from the scene center."""
    north, east = p.station_offset_km
    lat = p.center_lat + north / KM_PER_DEG
    lon = p.center_lon + east / (KM_PER_DEG * math.cos(math.radians(p.center_lat)))
    return lat, lon


def generate_scene(p: SceneParams) -> SyntheticScene:
    """Seeded-deterministic scene; all randomness flows from ``p.seed``."""
    rng = np.random.default_rng(p.seed)
    km = p.resolution_m / 1000.0
    rows = (np.arange(p.rows) + 0.5) * km
    cols = (np.arange(p.cols) + 0.5) * km
    y_km, x_km = np.meshgrid(rows, cols, indexing="ij")

    truth = _rain_cells(p, rng, y_km, x_km)
    base = p.wind_base + (rng.uniform(-p.wind_spread, p.wind_spread) if p.wind_spread > 0 else 0.0)
    wind = base + p.wind_gradient[0] * (y_km - rows.mean()) + p.wind_gradient[1] * (x_km - cols.mean())
    wind = np.maximum(wind, 0.0)
    land = _land_mask(p, rng, y_km, x_km)
    incidence = np.broadcast_to(np.linspace(*p.incidence_deg, p.cols), truth.shape).copy()

    coupling = np.tanh(truth / 10.0)
    saturation = np.clip(1.0 - wind / p.vv_saturation_wind, 0.0, 1.0)
    floor = 10.0 ** (p.noise_floor_db / 10.0)
    vv = cmod5n(wind, REFERENCE_DIRECTION, incidence) * (1.0 + p.coupling_vv * saturation * coupling)
    vh = cmod2pol(incidence) * (wind / 10.0) ** 2 * (1.0 + p.coupling_vh * coupling) + floor
    if p.noise_std > 0:
        vv = vv * (1.0 + p.noise_std * rng.standard_normal(vv.shape))
        vh = vh + p.noise_std * floor * rng.standard_normal(vh.shape)
    vv, vh = np.maximum(vv, 0.0), np.maximum(vh, 0.0)

    groundtruth, shift = _misalign(truth, p, rng)
    station = station_location(p)
    iw_id = f"{p.iw_prefix}{p.seed:05d}"
    raster = GeoRaster(
        resolution_m=p.resolution_m,
        geotransform=scene_geotransform(p),
        channels={
            "sigma0_vv": vv.astype(np.float32),
            "sigma0_vh": vh.astype(np.float32),
            "incidence": incidence.astype(np.float32),
            "land_mask": land,
            "nesz": np.full(truth.shape, p.noise_floor_db, dtype=np.float32),
            "wind": wind.astype(np.float32),
        },
        timestamp=p.start_time + timedelta(hours=p.seed),
        metadata={
            "iw_id": iw_id,
            "processing_version": p.processing_version,
            "station_id": f"{p.iw_prefix}-RADAR",
            "station_lat": repr(station[0]),
            "station_lon": repr(station[1]),
        },
    )
    raster = normalize_raster(raster)
    raster.channels["rain"] = groundtruth.astype(np.float32)
    return SyntheticScene(raster, truth, groundtruth, wind, station, shift)


def sar_only(scene: SyntheticScene) -> GeoRaster:
    """The scene as a SAR acquisition: backscatter and auxiliaries, no rain or station."""
    meta = {k: v for k, v in scene.raster.metadata.items() if not k.startswith("station")}
    return scene.raster.model_copy(
        update={"channels": {n: scene.raster.channels[n] for n in SAR_ONLY}, "metadata": meta}
    )


def destination(lat: float, lon: float, azimuth_deg: np.ndarray, range_m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Spherical destination point from a bearing and ground range."""
    p1, l1 = math.radians(lat), math.radians(lon)
    theta = np.radians(azimuth_deg)
    delta = np.asarray(range_m, dtype=np.float64) / 1000.0 / EARTH_RADIUS_KM
    p2 = np.arcsin(np.sin(p1) * np.cos(delta) + np.cos(p1) * np.sin(delta) * np.cos(theta))
    l2 = l1 + np.arctan2(np.sin(theta) * np.sin(delta) * np.cos(p1), np.cos(delta) - np.sin(p1) * np.sin(p2))
    return np.degrees(p2), np.degrees(l2)


def scene_to_polar_scan(
    scene: SyntheticScene,
    gate_spacing_m: float = 250.0,
    azimuth_width_deg: float = 1.0,
    delay_s: float = 60.0,
) -> PolarScan:
    """Sample the delivered ground truth on the station's polar grid (zero outside the scene)."""
    raster = scene.raster
    lat0, lon0 = scene.station
    corners_lat, corners_lon = raster.pixel_to_lonlat(
        np.array([0, 0, raster.rows, raster.rows]), np.array([0, raster.cols, 0, raster.cols])
    )
    reach_m = float(np.max(great_circle_km(lat0, lon0, corners_lat, corners_lon))) * 1000.0
    n_range = int(math.ceil(reach_m / gate_spacing_m)) + 1
    n_az = int(round(360.0 / azimuth_width_deg))
    az = (np.arange(n_az) + 0.5) * azimuth_width_deg
    rg = (np.arange(n_range) + 0.5) * gate_spacing_m
    aa, rr = np.meshgrid(az, rg, indexing="ij")
    lat, lon = destination(lat0, lon0, aa, rr)
    row, col = raster.lonlat_to_pixel(lat, lon)
    rates = ndimage.map_coordinates(scene.groundtruth, [row - 0.5, col - 0.5], order=1, mode="constant", cval=0.0)
    return PolarScan(
        station_id=raster.metadata.get("station_id", ""),
        station_lat=lat0,
        station_lon=lon0,
        timestamp=raster.timestamp + timedelta(seconds=delay_s),
        rates=np.maximum(rates, 0.0),
        azimuth_width_deg=azimuth_width_deg,
        gate_spacing_m=gate_spacing_m,
    )


def scene_params(base: SceneParams, index: int) -> SceneParams:
    return base.model_copy(update={"seed": base.seed + index})


def _write_scene(args: tuple[SceneParams, str, bool]) -> str:
    p, out_dir, polar = args
    out = Path(out_dir)
    scene = generate_scene(p)
    iw_id = scene.raster.metadata["iw_id"]
    containers.write_geo_raster(out / "collocated" / f"{iw_id}.rsgeo", scene.raster)
    containers.write_geo_raster(out / "sar" / f"{iw_id}.rsgeo", sar_only(scene))
    if polar:
        containers.write_polar_scan(out / "radar" / f"{iw_id}.rspol", scene_to_polar_scan(scene))
    return iw_id


def write_scenes(
    p: SceneParams,
    n_scenes: int,
    out_dir: str | Path,
    polar_scans: bool = True,
    workers: int | None = None,
) -> list[str]:
    """Write ``sar/``, ``radar/`` and ``collocated/`` containers for ``n_scenes`` seeds."""
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    out_dir = Path(out_dir)
    for sub in ("sar", "radar", "collocated"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    workers = workers or settings.workers
    jobs = [(scene_params(p, i), str(out_dir), polar_scans) for i in range(n_scenes)]
    if workers > 1 and n_scenes > 1:
        with ProcessPoolExecutor(max_workers=min(workers, n_scenes)) as pool:
            ids = list(pool.map(_write_scene, jobs))
    else:
        ids = [_write_scene(j) for j in jobs]
    log.info("scenes_written", scenes=len(ids), out_dir=str(out_dir), polar_scans=polar_scans)
    return ids


def synth_dataset(
    p: SceneParams,
    n_scenes: int,
    out_dir: str | Path,
    cfg: DatasetConfig | None = None,
    seed: int = 0,
    polar_scans: bool = False,
    workers: int | None = None,
) -> DatasetManifest:
    """Scenes through the dataset pipeline: extract, label, cap, partition.

    With fewer than three IWs no three-way split exists; every IW then goes to
    train.
    """
    cfg = cfg or DatasetConfig()
    out_dir = Path(out_dir)
    write_scenes(p, n_scenes, out_dir, polar_scans, workers)
    records = build_records(out_dir / "collocated", cfg, workers)
    iws = sorted({r.iw_id for r in records})
    if len(iws) >= 3:
        manifest = assemble_manifest(records, cfg, seed)
    else:
        log.warning("too_few_iws_for_split", iws=len(iws), fallback="train")
        capped = cap_rainless(records, cfg.cap_bin_width, cfg.cap_fraction, seed)
        manifest = DatasetManifest(
            records=capped,
            split=dict.fromkeys(iws, "train"),
            histogram=wind_histogram(records, cfg.cap_bin_width),
            histogram_capped=wind_histogram(capped, cfg.cap_bin_width),
            config={"dataset": cfg.model_dump(mode="json"), "seed": seed},
        )
    manifest.config["synthetic"] = json.loads(p.model_dump_json())
    manifest.config["n_scenes"] = n_scenes
    manifest.save(out_dir / "manifest.json")
    log.info("synthetic_dataset_built", scenes=n_scenes, patches=len(manifest.records), iws=len(iws))
    return manifest
