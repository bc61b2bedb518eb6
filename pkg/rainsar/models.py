"""Pydantic models for scenes, patches, training configuration and reports."""

import json
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from rainsar.errors import GeometryError

N_WIND_CLASSES = 5
N_CLASSES = 2 * N_WIND_CLASSES
SUBSETS = ("train", "val", "test")


# --- GMF ---
class GmfInput(BaseModel):
    wind_speed: float
    wind_direction_rel: float = 0.0
    incidence: float

    @field_validator("wind_speed")
    @classmethod
    def validate_wind_speed(cls, value: float) -> float:
        if not math.isfinite(value) or value < 0:
            raise ValueError("wind_speed must be finite and non-negative")
        return value

    @field_validator("wind_direction_rel")
    @classmethod
    def wrap_direction(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("wind_direction_rel must be finite")
        return value % 360.0


class SsrPair(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    ssr_vv: float | np.ndarray
    ssr_vh: float | np.ndarray


class GmfCoefficients(BaseModel):
    name: str
    version: str
    form: Literal["cmod5n", "affine_db"]
    coefficients: list[float]
    valid_incidence_deg: tuple[float, float]
    sha256: str
    description: str = ""

    @model_validator(mode="after")
    def validate_form(self) -> "GmfCoefficients":
        expected = {"cmod5n": 28, "affine_db": 2}[self.form]
        if len(self.coefficients) != expected:
            raise ValueError(f"{self.form} expects {expected} coefficients, got {len(self.coefficients)}")
        lo, hi = self.valid_incidence_deg
        if not lo < hi:
            raise ValueError("valid_incidence_deg must be [min, max] with min < max")
        return self


# --- Rasters and scans ---
class GeoRaster(BaseModel):
    """Geocoded 2-D fields sharing one grid.

    ``geotransform`` follows the GDAL convention with x = longitude and
    y = latitude: ``lon = g0 + col*g1 + row*g2``, ``lat = g3 + col*g4 + row*g5``
    at pixel corners; pixel centers sit at ``(row + 0.5, col + 0.5)``.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    resolution_m: float
    geotransform: tuple[float, float, float, float, float, float]
    channels: dict[str, np.ndarray]
    timestamp: datetime
    metadata: dict[str, str] = Field(default_factory=dict)

    @field_validator("resolution_m")
    @classmethod
    def validate_resolution(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("resolution_m must be > 0")
        return value

    @field_validator("channels")
    @classmethod
    def validate_channels(cls, value: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        if not value:
            raise ValueError("at least one channel is required")
        shapes = {np.shape(a) for a in value.values()}
        if len(shapes) != 1:
            raise ValueError(f"channels must share one shape, got {sorted(shapes)}")
        if len(next(iter(shapes))) != 2:
            raise ValueError("channels must be 2-D")
        mask = value.get("land_mask")
        if mask is not None and not np.isin(mask, (0, 1)).all():
            raise ValueError("land_mask values must be 0 (land) or 1 (ocean)")
        return value

    @property
    def shape(self) -> tuple[int, int]:
        return next(iter(self.channels.values())).shape

    @property
    def rows(self) -> int:
        return self.shape[0]

    @property
    def cols(self) -> int:
        return self.shape[1]

    def channel(self, name: str) -> np.ndarray:
        if name not in self.channels:
            raise KeyError(f"Raster has no channel {name!r} (available: {sorted(self.channels)})")
        return self.channels[name]

    def pixel_to_lonlat(self, row: np.ndarray | float, col: np.ndarray | float) -> tuple[np.ndarray, np.ndarray]:
        """Continuous pixel coordinates (corner origin) to (lat, lon)."""
        g = self.geotransform
        row = np.asarray(row, dtype=np.float64)
        col = np.asarray(col, dtype=np.float64)
        lon = g[0] + col * g[1] + row * g[2]
        lat = g[3] + col * g[4] + row * g[5]
        return lat, lon

    def lonlat_to_pixel(self, lat: np.ndarray, lon: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Inverse of ``pixel_to_lonlat``; raises GeometryError on a singular transform."""
        g = self.geotransform
        det = g[1] * g[5] - g[2] * g[4]
        if det == 0 or not math.isfinite(det):
            raise GeometryError(f"Singular geotransform {g}")
        dx = np.asarray(lon, dtype=np.float64) - g[0]
        dy = np.asarray(lat, dtype=np.float64) - g[3]
        col = (g[5] * dx - g[2] * dy) / det
        row = (-g[4] * dx + g[1] * dy) / det
        return row, col

    def pixel_centers(self, rows: slice | None = None) -> tuple[np.ndarray, np.ndarray]:
        """(lat, lon) of pixel centers, optionally for a band of rows."""
        r = np.arange(self.rows, dtype=np.float64)[rows if rows is not None else slice(None)] + 0.5
        c = np.arange(self.cols, dtype=np.float64) + 0.5
        rr, cc = np.meshgrid(r, c, indexing="ij")
        return self.pixel_to_lonlat(rr, cc)

    def check_geotransform(self) -> None:
        g = self.geotransform
        det = g[1] * g[5] - g[2] * g[4]
        if det == 0 or not all(math.isfinite(v) for v in g):
            raise GeometryError(f"Singular geotransform {g}")


class CompositeScan(GeoRaster):
    """Provider-grid composite (2 km/px, 15 min cadence); rain in channel ``rain``."""

    cadence_minutes: int = 15


class PolarScan(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    station_id: str = ""
    station_lat: float
    station_lon: float
    elevation_angle: float = 0.5
    timestamp: datetime
    rates: np.ndarray
    azimuth_width_deg: float = 1.0
    gate_spacing_m: float = 250.0

    @field_validator("rates")
    @classmethod
    def validate_rates(cls, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value, dtype=np.float64)
        if value.ndim != 2:
            raise ValueError("rates must be [azimuth, range]")
        # NaN counts as missing; the on-disk sentinel is any negative value
        return np.where(np.isnan(value), -1.0, value)

    @model_validator(mode="after")
    def validate_azimuth_coverage(self) -> "PolarScan":
        if abs(self.rates.shape[0] * self.azimuth_width_deg - 360.0) > 1e-9:
            raise ValueError(
                f"{self.rates.shape[0]} azimuth bins of {self.azimuth_width_deg} deg do not cover 360 deg"
            )
        if self.gate_spacing_m <= 0:
            raise ValueError("gate_spacing_m must be > 0")
        return self

    @property
    def n_azimuth(self) -> int:
        return self.rates.shape[0]

    @property
    def n_range(self) -> int:
        return self.rates.shape[1]

    @property
    def max_range_m(self) -> float:
        return self.n_range * self.gate_spacing_m

    def masked_rates(self) -> np.ndarray:
        """Rates with missing gates as NaN."""
        return np.where(self.rates < 0, np.nan, self.rates)


# --- Dataset ---
class PatchRecord(BaseModel):
    iw_id: str
    raster_path: str | None = None
    row: int
    col: int
    size_px: int
    center_lat: float
    center_lon: float
    station_id: str = ""
    station_distance_km: float = 0.0
    incidence: float
    nesz: float
    wind_prior: float
    wind_max: float
    rain_flag: bool
    wind_class: int
    class_id: int
    missing_fraction: float = 0.0
    ocean_fraction: float = 1.0
    max_rain: float = 0.0
    processing_version: str = ""
    resolution_m: float | None = None

    @model_validator(mode="after")
    def validate_class(self) -> "PatchRecord":
        if not 0 <= self.wind_class < N_WIND_CLASSES:
            raise ValueError(f"wind_class {self.wind_class} outside 0..{N_WIND_CLASSES - 1}")
        if self.class_id != self.wind_class + N_WIND_CLASSES * int(self.rain_flag):
            raise ValueError("class_id must equal wind_class + 5 * rain_flag")
        if self.station_distance_km < 0:
            raise ValueError("station_distance_km must be >= 0")
        return self

    @property
    def key(self) -> str:
        return f"{self.iw_id}:{self.row}:{self.col}"


def decompose_class(class_id: int) -> tuple[bool, int]:
    """class_id -> (rain_flag, wind_class)."""
    if not 0 <= class_id < N_CLASSES:
        raise ValueError(f"class_id {class_id} outside 0..{N_CLASSES - 1}")
    return class_id >= N_WIND_CLASSES, class_id % N_WIND_CLASSES


class DatasetManifest(BaseModel):
    records: list[PatchRecord]
    split: dict[str, Literal["train", "val", "test"]] = Field(default_factory=dict)
    histogram: dict[str, int] = Field(default_factory=dict)
    histogram_capped: dict[str, int] = Field(default_factory=dict)
    config: dict[str, Any] = Field(default_factory=dict)
    version: str = "1"
    created_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))

    @model_validator(mode="after")
    def validate_split(self) -> "DatasetManifest":
        if self.split:
            missing = {r.iw_id for r in self.records} - set(self.split)
            if missing:
                raise ValueError(f"records reference IWs absent from split: {sorted(missing)[:5]}")
        return self

    def subset(self, name: str) -> list[PatchRecord]:
        return [r for r in self.records if self.split.get(r.iw_id) == name]

    def subset_fractions(self) -> dict[str, float]:
        n = len(self.records) or 1
        return {s: len(self.subset(s)) / n for s in SUBSETS}

    def is_leak_free(self) -> bool:
        """True when every IW maps to exactly one subset (a dict guarantees it; records must agree)."""
        seen: dict[str, str] = {}
        for r in self.records:
            sub = self.split.get(r.iw_id)
            if sub is None or seen.setdefault(r.iw_id, sub) != sub:
                return False
        return True

    def save(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.model_dump_json(indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        return cls.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))


# --- Model and training ---
class ModelConfig(BaseModel):
    depth: int = 3
    base_channels: int = 16
    # (a, b) kernel counts per encoder level plus one bottleneck entry
    widths: list[tuple[int, int]] | None = None
    image_channels: int = 3
    scalar_channels: int = 3
    # 25 km patch at 200 m/px is 125 px; 128 is the nearest size the total stride divides
    input_px: int = 128
    # ground size of one model-grid pixel, recorded by training; None keeps the scene grid
    pixel_m: float | None = None
    kernel_size: int = 3
    discriminator_widths: tuple[int, ...] = (8, 16, 32)
    rr_activation: Literal["softplus", "relu"] = "softplus"
    target_transform: Literal["log1p", "identity"] = "log1p"
    scalar_offsets: tuple[float, float, float] = (35.0, -25.0, 0.0)
    scalar_scales: tuple[float, float, float] = (10.0, 5.0, 10.0)
    head_init: Literal["random", "zero"] = "random"

    @model_validator(mode="after")
    def validate_widths(self) -> "ModelConfig":
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.base_channels < 1:
            raise ValueError("base_channels must be > 0")
        if self.widths is None:
            self.widths = [(self.base_channels * 2**lvl, self.base_channels * 2**lvl) for lvl in range(self.depth + 1)]
        if len(self.widths) != self.depth + 1:
            raise ValueError(f"widths needs depth + 1 = {self.depth + 1} entries")
        if any(a <= 0 or b <= 0 for a, b in self.widths):
            raise ValueError("widths must be > 0")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd")
        if self.pixel_m is not None and self.pixel_m <= 0:
            raise ValueError("pixel_m must be > 0")
        if self.input_px % self.stride:
            raise ValueError(f"input_px {self.input_px} not divisible by total stride {self.stride}")
        return self

    @property
    def stride(self) -> int:
        return 2**self.depth


class LossWeights(BaseModel):
    a: float = 5.0  # L_rr
    b: float = 1.0 / 15.0  # L_seg
    c: float = 1.0 / 40.0  # L_max
    d: float = 1.0 / 40.0  # L_mean
    e: float = 5.0  # L_D

    @model_validator(mode="after")
    def validate_non_negative(self) -> "LossWeights":
        if min(self.a, self.b, self.c, self.d, self.e) < 0:
            raise ValueError("loss weights must be >= 0")
        return self

    @classmethod
    def parse(cls, text: str) -> "LossWeights":
        """Parse ``a,b,c,d,e``; each term may be a fraction such as ``1/15``."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 5:
            raise ValueError("expected five comma-separated weights a,b,c,d,e")
        values = []
        for p in parts:
            if "/" in p:
                num, den = p.split("/", 1)
                values.append(float(num) / float(den))
            else:
                values.append(float(p))
        return cls(a=values[0], b=values[1], c=values[2], d=values[3], e=values[4])


INPUT_NAMES = ("vv", "vh", "mask", "inc", "nesz", "wspd")


class TrainSchedule(BaseModel):
    batch_size: int = 20
    n_classes: int = N_CLASSES
    validation_every: int = 512
    validation_batches: int = 256
    max_validations: int = 100
    seed: int = 0
    discriminator_max_km: float = 80.0
    discriminator_steps: int = 1
    drop_input: list[str] = Field(default_factory=list)
    signed_mean_loss: bool = False
    learning_rate: float = 1e-5
    decay: float = 0.9
    epsilon: float = 1e-8
    clip_norm: float = 1.0
    clip_mode: Literal["norm", "value"] = "norm"
    dtype: Literal["float32", "float64"] = "float32"
    # model-ready patches kept in memory; least recently used are dropped first
    cache_patches: int = 20000

    @model_validator(mode="after")
    def validate_batch(self) -> "TrainSchedule":
        if self.batch_size % self.n_classes:
            raise ValueError(f"batch_size {self.batch_size} not divisible by {self.n_classes} classes")
        unknown = set(self.drop_input) - set(INPUT_NAMES)
        if unknown:
            raise ValueError(f"unknown inputs to drop: {sorted(unknown)} (choose from {INPUT_NAMES})")
        return self

    @property
    def per_class(self) -> int:
        return self.batch_size // self.n_classes


# --- Synthetic scenes ---
class SceneParams(BaseModel):
    seed: int = 0
    rows: int = 192
    cols: int = 192
    resolution_m: float = 390.625
    center_lat: float = 30.0
    center_lon: float = -80.0
    n_cells: tuple[int, int] = (0, 4)
    amplitude_mmh: tuple[float, float] = (5.0, 50.0)
    radius_km: tuple[float, float] = (1.5, 6.0)
    wind_base: float = 8.0
    wind_gradient: tuple[float, float] = (0.0, 0.0)  # m/s per km along (rows, cols)
    wind_spread: float = 0.0  # per-scene uniform jitter of the base wind, m/s
    coupling_vv: float = 1.2
    coupling_vh: float = 2.0
    vv_saturation_wind: float = 16.0
    noise_floor_db: float = -25.0
    noise_std: float = 0.05
    jitter_km: tuple[float, float] = (0.0, 0.0)
    land_probability: float = 0.0
    land_radius_km: tuple[float, float] = (5.0, 15.0)
    incidence_deg: tuple[float, float] = (30.0, 45.0)
    station_offset_km: tuple[float, float] = (10.0, 10.0)
    iw_prefix: str = "SYN"
    processing_version: str = "synthetic"
    start_time: datetime = datetime(2021, 1, 1, tzinfo=timezone.utc)

    @model_validator(mode="after")
    def validate_ranges(self) -> "SceneParams":
        if self.amplitude_mmh[0] < 0 or self.amplitude_mmh[1] < self.amplitude_mmh[0]:
            raise ValueError("amplitude_mmh must be a non-negative ascending range")
        if self.jitter_km[0] < 0 or self.jitter_km[1] > 5.0 or self.jitter_km[1] < self.jitter_km[0]:
            raise ValueError("jitter_km must be an ascending range within [0, 5] km")
        if self.n_cells[0] < 0 or self.n_cells[1] < self.n_cells[0]:
            raise ValueError("n_cells must be a non-negative ascending range")
        if not 0 <= self.land_probability <= 1:
            raise ValueError("land_probability must be in [0, 1]")
        if self.rows < 1 or self.cols < 1 or self.resolution_m <= 0:
            raise ValueError("scene size and resolution must be positive")
        return self


# --- Metrics ---
class PrfResult(BaseModel):
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    tp: float = 0.0
    fp: float = 0.0
    fn: float = 0.0
    tn: float = 0.0

    @property
    def support(self) -> float:
        return self.tp + self.fp + self.fn + self.tn


class ConfidenceInterval(BaseModel):
    lo: float | None = None
    hi: float | None = None
    std: float | None = None


class GroupMetrics(BaseModel):
    group: str
    key: str
    prf: PrfResult
    f1_ci: ConfidenceInterval | None = None
    n_patches: int = 0
    n_rain_true: int = 0
    n_rain_pred: int = 0
    rain_fraction_true: float | None = None
    rain_fraction_pred: float | None = None
    mean_rain_true: float | None = None
    mean_rain_pred: float | None = None
    diagnostic: str = ""


class ScatterStats(BaseModel):
    pcc: float
    rmse: float
    slope: float
    intercept: float
    n: int


class ThresholdRow(BaseModel):
    wind_bin: str
    threshold: float
    prf: PrfResult


class MetricsReport(BaseModel):
    wind_bins: list[GroupMetrics] = Field(default_factory=list)
    stations: list[GroupMetrics] = Field(default_factory=list)
    processing_versions: list[GroupMetrics] = Field(default_factory=list)
    regions: list[GroupMetrics] = Field(default_factory=list)
    overall: PrfResult | None = None
    scatter: ScatterStats | None = None
    threshold_sweep: list[ThresholdRow] = Field(default_factory=list)
    best_thresholds: dict[str, float | None] = Field(default_factory=dict)
    rate_histogram: dict[str, list[float]] = Field(default_factory=dict)
    ensemble: dict[str, float] = Field(default_factory=dict)
    config: dict[str, Any] = Field(default_factory=dict)
    created_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))

    @model_validator(mode="after")
    def validate_ranges(self) -> "MetricsReport":
        groups = self.wind_bins + self.stations + self.processing_versions + self.regions
        for g in groups:
            for v in (g.prf.precision, g.prf.recall, g.prf.f1):
                if v is not None and not 0.0 <= v <= 1.0:
                    raise ValueError(f"metric outside [0, 1] in group {g.key}")
        return self
