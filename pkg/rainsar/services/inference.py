"""Full-scene inference by overlapping tiles, and patch predictions for evaluation."""

from collections.abc import Sequence
from pathlib import Path

import numpy as np
import structlog
from scipy import ndimage

from rainsar.config import InferenceConfig
from rainsar.errors import ShapeMismatch
from rainsar.models import GeoRaster, PatchRecord
from rainsar.nn.network import RainNet
from rainsar.services import containers
from rainsar.services.evaluation import PatchPrediction, ensemble_stats
from rainsar.services.gmf import normalize_raster
from rainsar.services.training import PatchCache, load_checkpoint

log = structlog.get_logger(__name__)

TILE_BATCH = 8


def tile_origins(length: int, tile: int) -> list[int]:
    """Half-tile stride origins; a final origin is added so the far edge is covered."""
    if length < tile:
        raise ShapeMismatch(f"scene extent {length} px is smaller than the {tile} px model patch")
    step = max(1, tile // 2)
    origins = list(range(0, length - tile + 1, step))
    if origins[-1] != length - tile:
        origins.append(length - tile)
    return origins


def blend_window(tile: int, blending: str = "uniform") -> np.ndarray:
    if blending == "uniform":
        return np.ones((tile, tile))
    if blending == "cosine":
        w = np.sin(np.pi * (np.arange(tile) + 0.5) / tile) ** 2
        return np.outer(w, w)
    raise ValueError(f"unknown blending {blending!r}")


def load_models(checkpoints: Sequence[str | Path]) -> list[RainNet]:
    models = [load_checkpoint(p)[0] for p in checkpoints]
    sizes = {m.cfg.input_px for m in models}
    if len(sizes) > 1:
        raise ShapeMismatch(f"ensemble members disagree on input size: {sorted(sizes)}")
    scales = {m.cfg.pixel_m for m in models}
    if len(scales) > 1:
        raise ShapeMismatch(f"ensemble members disagree on model pixel size: {sorted(scales, key=str)}")
    return models


def _scene_inputs(raster: GeoRaster) -> GeoRaster:
    if "ssr_vv" not in raster.channels or "ssr_vh" not in raster.channels:
        raster = normalize_raster(raster)
    return raster


def _model_grid_factor(model: RainNet, raster: GeoRaster) -> float:
    """Scene-to-model zoom; 1 when the model keeps the scene grid."""
    if model.cfg.pixel_m is None or np.isclose(model.cfg.pixel_m, raster.resolution_m, rtol=1e-6, atol=0.0):
        return 1.0
    return raster.resolution_m / model.cfg.pixel_m


def _zoom_to(field: np.ndarray, shape: tuple[int, int], order: int) -> np.ndarray:
    factors = (shape[0] / field.shape[0], shape[1] / field.shape[1])
    out = ndimage.zoom(field, factors, order=order, grid_mode=True, mode="nearest")
    if out.shape != shape:
        raise ShapeMismatch(f"resampling produced {out.shape}, expected {shape}")
    return out


def _filled(a: np.ndarray) -> np.ndarray:
    a = a.astype(np.float64)
    fill = float(np.nanmean(a)) if np.isfinite(a).any() else 0.0
    return np.where(np.isfinite(a), a, fill)


def _predict_tiles(
    model: RainNet, image: np.ndarray, aux: list[np.ndarray], blending: str
) -> tuple[np.ndarray, np.ndarray]:
    tile = model.cfg.input_px
    shape = image.shape[1:]
    rows = tile_origins(shape[0], tile)
    cols = tile_origins(shape[1], tile)
    window = blend_window(tile, blending)
    seg = np.zeros(shape)
    rate = np.zeros(shape)
    weight = np.zeros(shape)
    origins = [(r, c) for r in rows for c in cols]
    for start in range(0, len(origins), TILE_BATCH):
        chunk = origins[start : start + TILE_BATCH]
        x_im = np.stack([image[:, r : r + tile, c : c + tile] for r, c in chunk])
        x_sc = np.array([[float(np.nanmean(a[r : r + tile, c : c + tile])) for a in aux] for r, c in chunk])
        p_seg, p_rate = model.predict(x_im, x_sc)
        for (r, c), s, y in zip(chunk, p_seg, p_rate):
            seg[r : r + tile, c : c + tile] += window * s
            rate[r : r + tile, c : c + tile] += window * y
            weight[r : r + tile, c : c + tile] += window
    return seg / weight, rate / weight


def predict_scene(model: RainNet, raster: GeoRaster, blending: str = "uniform") -> tuple[np.ndarray, np.ndarray]:
    """Blended (segmentation probability, rain rate mm/h) maps over the whole raster.

    A model trained on resampled patches (``cfg.pixel_m``) sees the scene
    resampled to the same pixel size; its outputs are resampled back.
    """
    raster = _scene_inputs(raster)
    fields = [np.nan_to_num(raster.channel(n).astype(np.float64)) for n in ("ssr_vv", "ssr_vh")]
    mask = raster.channel("land_mask").astype(np.float64)
    aux = [raster.channel(n).astype(np.float64) for n in ("incidence", "nesz", "wind")]

    factor = _model_grid_factor(model, raster)
    if factor == 1.0:
        return _predict_tiles(model, np.stack([*fields, mask]), aux, blending)

    grid = (round(raster.rows * factor), round(raster.cols * factor))
    log.debug("scene_resampled", scene_m=raster.resolution_m, model_m=model.cfg.pixel_m, grid=grid)
    image = np.stack([*(_zoom_to(f, grid, 1) for f in fields), _zoom_to(mask, grid, 0)])
    aux = [_zoom_to(_filled(a), grid, 1) for a in aux]
    seg, rate = _predict_tiles(model, image, aux, blending)
    return _zoom_to(seg, raster.shape, 1), np.maximum(_zoom_to(rate, raster.shape, 1), 0.0)


def infer(
    models: Sequence[RainNet],
    raster: GeoRaster,
    cfg: InferenceConfig | None = None,
) -> GeoRaster:
    """Raster with ``y_seg`` and ``y_rr`` channels (ensemble mean; ``y_rr_std`` for several models)."""
    cfg = cfg or InferenceConfig()
    if not models:
        raise ValueError("at least one model is required")
    maps = [predict_scene(m, raster, cfg.blending) for m in models]
    channels = {
        "y_seg": np.mean([s for s, _ in maps], axis=0).astype(np.float32),
        "y_rr": np.mean([y for _, y in maps], axis=0).astype(np.float32),
    }
    if len(models) > 1:
        _, std, _ = ensemble_stats([y for _, y in maps])
        channels["y_rr_std"] = std.astype(np.float32)
    if "land_mask" in raster.channels:
        channels["land_mask"] = raster.channel("land_mask")
    meta = {**raster.metadata, "blending": cfg.blending, "ensemble_size": str(len(models))}
    return GeoRaster(
        resolution_m=raster.resolution_m,
        geotransform=raster.geotransform,
        channels=channels,
        timestamp=raster.timestamp,
        metadata=meta,
    )


def infer_file(
    checkpoints: Sequence[str | Path],
    raster_path: str | Path,
    out_path: str | Path,
    cfg: InferenceConfig | None = None,
) -> Path:
    raster = containers.read_geo_raster(raster_path)
    result = infer(load_models(checkpoints), raster, cfg)
    path = containers.write_geo_raster(out_path, result)
    log.info("inference_completed", raster=str(raster_path), out=str(path), models=len(checkpoints))
    return path


def predict_patches(
    models: Sequence[RainNet],
    records: Sequence[PatchRecord],
    epsilon: float = 1e-6,
) -> list[PatchPrediction]:
    """Ensemble-mean predictions for manifest patches, with the mean relative spread over ocean."""
    if not models:
        raise ValueError("at least one model is required")
    cache = PatchCache(models[0].cfg.input_px)
    out: list[PatchPrediction] = []
    for start in range(0, len(records), TILE_BATCH):
        chunk = list(records[start : start + TILE_BATCH])
        batch = cache.batch(chunk)
        runs = [m.predict(batch["image"], batch["scalars"])[1] for m in models]
        for i, r in enumerate(chunk):
            mask = batch["mask"][i]
            rel_std = None
            if len(runs) > 1:
                mean, _, rel = ensemble_stats([run[i] for run in runs], epsilon)
                sel = (mask > 0) & np.isfinite(rel)
                rel_std = float(rel[sel].mean()) if sel.any() else None
            else:
                mean = runs[0][i]
            out.append(
                PatchPrediction(
                    key=r.key,
                    truth=batch["rain"][i],
                    pred=mean,
                    mask=mask,
                    wind_prior=r.wind_prior,
                    iw_id=r.iw_id,
                    station_id=r.station_id,
                    processing_version=r.processing_version,
                    center_lat=r.center_lat,
                    center_lon=r.center_lon,
                    relative_std=rel_std,
                )
            )
    log.info("patches_predicted", patches=len(out), models=len(models))
    return out
