"""Patch extraction, labeling, rainless capping and manifest construction.

Collocated rasters carry the channels ``ssr_vv``, ``ssr_vh``, ``land_mask``
(1 = ocean), ``incidence`` (deg), ``nesz`` (dB), ``wind`` (model wind prior,
m/s) and ``rain`` (mm/h, NaN where missing).
"""

import math
from collections import Counter
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from pathlib import Path

import numpy as np
import structlog
from geopy.distance import great_circle
from scipy import ndimage

from rainsar import __version__
from rainsar.config import DatasetConfig, settings
from rainsar.errors import RasterTooSmall
from rainsar.models import N_CLASSES, N_WIND_CLASSES, DatasetManifest, GeoRaster, PatchRecord
from rainsar.services import containers
from rainsar.services.partition import partition

log = structlog.get_logger(__name__)

EARTH_RADIUS_KM = 6371.0
PATCH_CHANNELS = ("ssr_vv", "ssr_vh", "land_mask", "incidence", "nesz", "wind", "rain")


def patch_origins(length_px: int, resolution_m: float, size_km: float, stride_km: float) -> list[int]:
    """Pixel offsets of grid-aligned patch origins along one axis."""
    length_km = length_px * resolution_m / 1000.0
    if length_km + 1e-9 < size_km:
        return []
    n = math.floor((length_km - size_km) / stride_km + 1e-9) + 1
    return [math.floor(k * stride_km * 1000.0 / resolution_m + 0.5) for k in range(n)]


def patch_size_px(resolution_m: float, size_km: float) -> int:
    return round(size_km * 1000.0 / resolution_m)


def wind_class(wind: float, edges: Sequence[float] = (2.0, 6.0, 10.0, 15.0)) -> int:
    """Index of the half-open interval [lo, hi) containing ``wind``."""
    return int(np.searchsorted(np.asarray(edges), wind, side="right"))


def label_patch(
    rain: np.ndarray,
    wind_prior: float,
    land_mask: np.ndarray | None = None,
    threshold_mmh: float = 3.0,
    area_fraction: float = 0.05,
    wind_edges: Sequence[float] = (2.0, 6.0, 10.0, 15.0),
) -> tuple[bool, int, int]:
    """(rain_flag, wind_class, class_id) of one patch.

    A pixel rains when its rate exceeds ``threshold_mmh``; the patch rains
    when more than ``area_fraction`` of its ocean pixels do. Missing rain
    counts as dry.
    """
    rain = np.asarray(rain, dtype=np.float64)
    if rain.size == 0:
        raise ValueError("rain raster is empty")
    ocean = np.ones(rain.shape, dtype=bool) if land_mask is None else np.asarray(land_mask) > 0
    n_ocean = int(ocean.sum())
    wet = np.nan_to_num(rain, nan=0.0) > threshold_mmh
    rain_flag = n_ocean > 0 and (int((wet & ocean).sum()) / n_ocean) > area_fraction
    wc = wind_class(wind_prior, wind_edges)
    return bool(rain_flag), wc, wc + N_WIND_CLASSES * int(rain_flag)


def _patch_scalars(raster: GeoRaster, sl: tuple[slice, slice]) -> dict[str, float]:
    wind = raster.channel("wind")[sl].astype(np.float64)
    return {
        "incidence": float(np.nanmean(raster.channel("incidence")[sl])),
        "nesz": float(np.nanmean(raster.channel("nesz")[sl])),
        "wind_prior": float(np.nanmean(wind)),
        "wind_max": float(np.nanmax(wind)),
    }


def extract_patches(
    raster: GeoRaster,
    size_km: float = 25.0,
    stride_km: float = 12.5,
    station: tuple[float, float] | None = None,
    max_km: float = 175.0,
    cfg: DatasetConfig | None = None,
    raster_path: str | None = None,
) -> list[PatchRecord]:
    """Overlapping labeled patches whose centers lie within ``max_km`` of the station.

    Patches without any ocean pixel are dropped.
    """
    cfg = cfg or DatasetConfig()
    size = patch_size_px(raster.resolution_m, size_km)
    rows = patch_origins(raster.rows, raster.resolution_m, size_km, stride_km)
    cols = patch_origins(raster.cols, raster.resolution_m, size_km, stride_km)
    if not rows or not cols:
        raise RasterTooSmall(
            f"Raster of {raster.rows}x{raster.cols} px at {raster.resolution_m} m/px is smaller than one "
            f"{size_km} km patch"
        )
    iw_id = raster.metadata.get("iw_id", raster_path or "")
    station_id = raster.metadata.get("station_id", "")
    version = raster.metadata.get("processing_version", "")
    land = raster.channel("land_mask")
    rain = raster.channel("rain") if "rain" in raster.channels else np.zeros(raster.shape, dtype=np.float32)

    records: list[PatchRecord] = []
    for r0 in rows:
        for c0 in cols:
            sl = (slice(r0, r0 + size), slice(c0, c0 + size))
            lat, lon = raster.pixel_to_lonlat(r0 + size / 2.0, c0 + size / 2.0)
            lat, lon = float(lat), float(lon)
            distance = 0.0
            if station is not None:
                distance = great_circle((lat, lon), station, radius=EARTH_RADIUS_KM).km
                if distance > max_km:
                    continue
            mask = land[sl]
            ocean = mask > 0
            if not ocean.any():
                continue
            patch_rain = rain[sl].astype(np.float64)
            scalars = _patch_scalars(raster, sl)
            flag, wc, cid = label_patch(
                patch_rain,
                scalars["wind_max"],
                mask,
                cfg.rain_threshold_mmh,
                cfg.area_fraction,
                cfg.wind_edges,
            )
            ocean_rain = patch_rain[ocean]
            records.append(
                PatchRecord(
                    iw_id=iw_id,
                    raster_path=raster_path,
                    row=r0,
                    col=c0,
                    size_px=size,
                    center_lat=lat,
                    center_lon=lon,
                    station_id=station_id,
                    station_distance_km=distance,
                    rain_flag=flag,
                    wind_class=wc,
                    class_id=cid,
                    missing_fraction=float(np.isnan(ocean_rain).mean()),
                    ocean_fraction=float(ocean.mean()),
                    max_rain=float(np.nan_to_num(ocean_rain, nan=0.0).max()),
                    processing_version=version,
                    resolution_m=raster.resolution_m,
                    **scalars,
                )
            )
    return records


def wind_bins(records: Sequence[PatchRecord], bin_width: float = 0.5) -> np.ndarray:
    return np.floor(np.array([r.wind_prior for r in records], dtype=np.float64) / bin_width).astype(int)


def wind_histogram(records: Sequence[PatchRecord], bin_width: float = 0.5) -> dict[str, int]:
    """Patch counts keyed by the lower edge of each wind bin."""
    counts = Counter(wind_bins(records, bin_width).tolist())
    return {f"{b * bin_width:g}": counts[b] for b in sorted(counts)}


def cap_rainless(
    records: Sequence[PatchRecord],
    bin_width: float = 0.5,
    cap_fraction: float = 0.2,
    seed: int = 0,
) -> list[PatchRecord]:
    """Subsample rainless records so no wind bin holds more than ``cap_fraction`` of the largest bin.

    The cap is taken from the full histogram; rain records are never removed
    and the surviving records keep their input order.
    """
    if not records:
        return []
    bins = wind_bins(records, bin_width)
    full = Counter(bins.tolist())
    cap = math.floor(cap_fraction * max(full.values()) + 1e-9)
    rng = np.random.default_rng(seed)
    drop: set[int] = set()
    for b in sorted(full):
        dry = [i for i, r in enumerate(records) if bins[i] == b and not r.rain_flag]
        if len(dry) > cap:
            keep = set(rng.choice(len(dry), size=cap, replace=False).tolist())
            drop.update(idx for k, idx in enumerate(dry) if k not in keep)
    kept = [r for i, r in enumerate(records) if i not in drop]
    log.info("rainless_capped", before=len(records), after=len(kept), cap=cap)
    return kept


def class_table(manifest: DatasetManifest) -> dict[str, list[int]]:
    """Per-subset patch counts for each of the 10 classes (plus ``all``)."""
    table = {name: [0] * N_CLASSES for name in ("train", "val", "test", "all")}
    for r in manifest.records:
        table["all"][r.class_id] += 1
        sub = manifest.split.get(r.iw_id)
        if sub:
            table[sub][r.class_id] += 1
    return table


@lru_cache(maxsize=64)
def _load_raster(path: str) -> GeoRaster:
    return containers.read_geo_raster(path)


def load_patch(
    record: PatchRecord,
    input_px: int | None = None,
    raster: GeoRaster | None = None,
) -> dict[str, np.ndarray]:
    """Model-ready arrays for one record.

    Returns ``image`` [3, H, W] (ssr_vv, ssr_vh, land_mask), ``scalars`` [3]
    (incidence, nesz, wind_prior), ``rain`` [H, W] with missing as 0 and
    ``mask`` [H, W]. When ``input_px`` differs from the stored patch size the
    arrays are resampled (bilinear for fields, nearest for the mask).
    """
    raster = raster or _load_raster(str(record.raster_path))
    sl = (slice(record.row, record.row + record.size_px), slice(record.col, record.col + record.size_px))
    fields = [np.nan_to_num(raster.channel(n)[sl].astype(np.float64), nan=0.0) for n in ("ssr_vv", "ssr_vh")]
    mask = raster.channel("land_mask")[sl].astype(np.float64)
    rain = raster.channel("rain")[sl].astype(np.float64) if "rain" in raster.channels else np.zeros_like(mask)
    rain = np.maximum(np.nan_to_num(rain, nan=0.0), 0.0)
    if input_px is not None and input_px != record.size_px:
        factor = input_px / record.size_px
        fields = [ndimage.zoom(f, factor, order=1, grid_mode=True, mode="nearest") for f in fields]
        rain = np.maximum(ndimage.zoom(rain, factor, order=1, grid_mode=True, mode="nearest"), 0.0)
        mask = ndimage.zoom(mask, factor, order=0, grid_mode=True, mode="nearest")
    return {
        "image": np.stack([*fields, mask]),
        "scalars": np.array([record.incidence, record.nesz, record.wind_prior], dtype=np.float64),
        "rain": rain,
        "mask": mask,
    }


def model_pixel_m(records: Sequence[PatchRecord], input_px: int) -> float | None:
    """Ground size of one model pixel after ``load_patch`` resamples these records to ``input_px``."""
    scales = sorted({r.resolution_m * r.size_px / input_px for r in records if r.resolution_m})
    if not scales:
        return None
    if scales[-1] - scales[0] > 1e-6 * scales[0]:
        log.warning("mixed_patch_scales", lo_m=scales[0], hi_m=scales[-1], used_m=scales[0])
    return scales[0]


def _station_of(raster: GeoRaster) -> tuple[float, float] | None:
    lat = raster.metadata.get("station_lat")
    lon = raster.metadata.get("station_lon")
    if lat is None or lon is None:
        return None
    return float(lat), float(lon)


def _extract_file(path: str, cfg: DatasetConfig) -> list[PatchRecord]:
    raster = containers.read_geo_raster(path)
    if "iw_id" not in raster.metadata:
        raster.metadata["iw_id"] = Path(path).stem
    return extract_patches(
        raster, cfg.patch_km, cfg.stride_km, _station_of(raster), cfg.max_station_km, cfg, raster_path=path
    )


def build_records(
    input_dir: str | Path,
    cfg: DatasetConfig | None = None,
    workers: int | None = None,
) -> list[PatchRecord]:
    """Extract and label patches from every collocated raster of a directory."""
    cfg = cfg or DatasetConfig()
    workers = workers or settings.workers
    paths = [str(p) for p in containers.list_containers(input_dir, "geo_raster")]
    if workers > 1 and len(paths) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_extract_file, paths, [cfg] * len(paths)))
    else:
        chunks = [_extract_file(p, cfg) for p in paths]
    records = [r for chunk in chunks for r in chunk]
    log.info("patches_extracted", rasters=len(paths), patches=len(records))
    return records


def assemble_manifest(
    records: Sequence[PatchRecord],
    cfg: DatasetConfig,
    seed: int,
) -> DatasetManifest:
    """Cap, partition and package records into a manifest."""
    histogram = wind_histogram(records, cfg.cap_bin_width)
    capped = cap_rainless(records, cfg.cap_bin_width, cfg.cap_fraction, seed)
    split = partition(
        capped,
        cfg.fractions,
        cfg.partition_iterations,
        seed,
        restarts=cfg.partition_restarts,
        random_baseline=cfg.partition_random_baseline,
        fraction_weight=cfg.partition_fraction_weight,
        exhaustive_limit=cfg.partition_exhaustive_limit,
    )
    return DatasetManifest(
        records=list(capped),
        split=split,
        histogram=histogram,
        histogram_capped=wind_histogram(capped, cfg.cap_bin_width),
        config={"dataset": cfg.model_dump(mode="json"), "seed": seed, "rainsar_version": __version__},
    )


def build_dataset(
    input_dir: str | Path,
    manifest_out: str | Path | None = None,
    cfg: DatasetConfig | None = None,
    seed: int = 0,
    workers: int | None = None,
) -> DatasetManifest:
    """extract -> label -> cap -> partition over a directory of collocated rasters."""
    cfg = cfg or DatasetConfig()
    records = build_records(input_dir, cfg, workers)
    manifest = assemble_manifest(records, cfg, seed)
    manifest.config["raster_sha256"] = {
        Path(p).name: containers.file_sha256(p) for p in sorted({r.raster_path for r in manifest.records})
    }
    if manifest_out is not None:
        manifest.save(manifest_out)
    log.info(
        "dataset_built",
        patches=len(manifest.records),
        iws=len(manifest.split),
        fractions=manifest.subset_fractions(),
    )
    return manifest
