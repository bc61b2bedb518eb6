"""Process settings and run configuration."""

from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from rainsar import __version__
from rainsar.models import LossWeights, ModelConfig, SceneParams, TrainSchedule

DATA_DIR = Path(__file__).resolve().parent / "data"


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="RAINSAR_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Parallelism over rasters / row bands / ensemble runs
    workers: int = 1

    @field_validator("workers")
    @classmethod
    def validate_workers(cls, value: int) -> int:
        if value < 1:
            raise ValueError("workers must be >= 1")
        return value


settings = Settings()


# --- Module blocks ---
class GmfConfig(BaseModel):
    vv_file: Path = DATA_DIR / "gmf" / "cmod5n.json"
    vh_file: Path = DATA_DIR / "gmf" / "cmod2pol_default.json"
    reference_wind_speed: float = 10.0
    reference_direction: float = 45.0


class CollocationConfig(BaseModel):
    window_s: float = 600.0
    max_station_km: float = 250.0


class DatasetConfig(BaseModel):
    patch_km: float = 25.0
    stride_km: float = 12.5
    max_station_km: float = 175.0
    rain_threshold_mmh: float = 3.0
    area_fraction: float = 0.05
    wind_edges: tuple[float, ...] = (2.0, 6.0, 10.0, 15.0)
    cap_bin_width: float = 0.5
    cap_fraction: float = 0.2
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    partition_iterations: int = 2000
    partition_restarts: int = 4
    partition_random_baseline: int = 100
    partition_fraction_weight: float = 2.0
    partition_exhaustive_limit: int = 6561

    @field_validator("fractions")
    @classmethod
    def validate_fractions(cls, value: tuple[float, float, float]) -> tuple[float, float, float]:
        if any(f < 0 for f in value) or abs(sum(value) - 1.0) > 1e-6:
            raise ValueError("fractions must be non-negative and sum to 1")
        return value

    @property
    def n_wind_classes(self) -> int:
        return len(self.wind_edges) + 1


class EvaluationConfig(BaseModel):
    rain_threshold_mmh: float = 3.0
    area_fraction: float = 0.05
    thresholds: tuple[float, ...] = (1.0, 3.0, 10.0)
    wind_bins: tuple[float, ...] = (0.0, 4.0, 8.0, 12.0, 16.0, 20.0)
    n_resamples: int = 1000
    confidence: float = 0.95
    region_stride_deg: float = 4.0
    relative_std_epsilon: float = 1e-6


class InferenceConfig(BaseModel):
    blending: Literal["uniform", "cosine"] = "uniform"


class TrainingConfig(BaseModel):
    schedule: TrainSchedule = Field(default_factory=TrainSchedule)
    weights: LossWeights = Field(default_factory=LossWeights)
    ablation: str | None = None
    ensemble_size: int = 1


class SyntheticConfig(BaseModel):
    scene: SceneParams = Field(default_factory=SceneParams)
    n_scenes: int = 8
    polar_scans: bool = True


class RunConfig(BaseModel):
    """Resolved configuration of one CLI run; snapshotted beside its outputs."""

    subcommand: str = ""
    seed: int = 0
    paths: dict[str, str] = Field(default_factory=dict)
    gmf: GmfConfig = Field(default_factory=GmfConfig)
    collocation: CollocationConfig = Field(default_factory=CollocationConfig)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    synthetic: SyntheticConfig = Field(default_factory=SyntheticConfig)
    inference: InferenceConfig = Field(default_factory=InferenceConfig)
    version: str = __version__
    created_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))

    @model_validator(mode="after")
    def validate_seed(self) -> "RunConfig":
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        return self


def apply_overrides(data: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    """Apply dotted ``key.sub=value`` overrides; values are parsed as YAML scalars."""
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"Override must look like key=value: {item!r}")
        key, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        cur = data
        parts = key.strip().split(".")
        for p in parts[:-1]:
            nxt = cur.get(p)
            if not isinstance(nxt, dict):
                nxt = {}
                cur[p] = nxt
            cur = nxt
        cur[parts[-1]] = value
    return data
