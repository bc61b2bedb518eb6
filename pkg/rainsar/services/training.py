"""Training loop: balanced sampling, critic and generator updates, validation and checkpoints."""

import csv
import json
import time
from collections import OrderedDict
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

import numpy as np
import structlog

from rainsar import __version__
from rainsar.config import settings
from rainsar.errors import ConfigError
from rainsar.models import DatasetManifest, LossWeights, ModelConfig, PatchRecord, TrainSchedule
from rainsar.nn.network import Discriminator, RainNet
from rainsar.nn.optim import RMSProp
from rainsar.nn.tensor import Tensor
from rainsar.services import containers
from rainsar.services.dataset import load_patch, model_pixel_m
from rainsar.services.losses import LOSS_NAMES, as_floats, critic_loss, loss_components, loss_total
from rainsar.services.sampling import balanced_sample, class_pools

log = structlog.get_logger(__name__)

LOG_COLUMNS = (
    ["validation", "step"]
    + [f"train_{n}" for n in LOSS_NAMES]
    + ["train_total", "critic_loss"]
    + [f"val_{n}" for n in LOSS_NAMES]
    + ["val_total", "wall_clock_s"]
)


class PatchCache:
    """Model-ready arrays keyed by record, least recently used dropped beyond ``max_entries``."""

    def __init__(self, input_px: int, max_entries: int | None = None):
        self.input_px = input_px
        self.max_entries = max_entries
        self._arrays: OrderedDict[str, dict[str, np.ndarray]] = OrderedDict()

    def __len__(self) -> int:
        return len(self._arrays)

    def get(self, record: PatchRecord) -> dict[str, np.ndarray]:
        key = f"{record.raster_path}:{record.key}"
        if key in self._arrays:
            self._arrays.move_to_end(key)
            return self._arrays[key]
        arrays = load_patch(record, self.input_px)
        self._arrays[key] = arrays
        if self.max_entries is not None and len(self._arrays) > self.max_entries:
            self._arrays.popitem(last=False)
        return arrays

    def batch(self, records: Sequence[PatchRecord]) -> dict[str, np.ndarray]:
        items = [self.get(r) for r in records]
        return {
            "image": np.stack([it["image"] for it in items]),
            "scalars": np.stack([it["scalars"] for it in items]),
            "rain": np.stack([it["rain"] for it in items]),
            "mask": np.stack([it["mask"] for it in items]),
            "distance": np.array([r.station_distance_km for r in records], dtype=np.float64),
        }


def _provenance(tag: str, records: Sequence[PatchRecord]) -> str:
    keys = sorted({r.key for r in records})
    return f"{tag}; patches {', '.join(keys[:4])}{' ...' if len(keys) > 4 else ''}"


def _evaluate_batch(model, critic, batch, schedule, weights, provenance) -> dict[str, float]:
    out = model(batch["image"], batch["scalars"])
    near = batch["distance"] < schedule.discriminator_max_km
    comps = loss_components(
        batch["rain"],
        out,
        batch["mask"],
        critic if weights.e > 0 else None,
        near,
        signed_mean=schedule.signed_mean_loss,
        target=model.to_target,
        provenance=provenance,
    )
    values = as_floats(comps)
    values["total"] = float(loss_total(values, weights))
    return values


def save_checkpoint(
    path: str | Path,
    model: RainNet,
    critic: Discriminator,
    opt_g: RMSProp,
    opt_d: RMSProp,
    rng: np.random.Generator,
    extra: dict[str, Any] | None = None,
) -> Path:
    blocks: dict[str, np.ndarray] = {}
    for name, arr in model.state_dict().items():
        blocks[f"model/{name}"] = arr
    for name, arr in critic.state_dict().items():
        blocks[f"critic/{name}"] = arr
    for p, acc in zip(opt_g.params, opt_g.accumulators):
        blocks[f"opt_g/{p.name}"] = acc
    for p, acc in zip(opt_d.params, opt_d.accumulators):
        blocks[f"opt_d/{p.name}"] = acc
    meta = {
        "model_config": model.cfg.model_dump(mode="json"),
        "dtype": str(model.dtype),
        "drop_input": list(model.drop_input),
        "optimizer": opt_g.hyperparameters(),
        "critic_optimizer": opt_d.hyperparameters(),
        "rng_state": rng.bit_generator.state,
        "version": __version__,
        **(extra or {}),
    }
    return containers.write_container(path, containers.encode_checkpoint(meta, blocks))


def load_checkpoint(path: str | Path) -> tuple[RainNet, Discriminator, dict[str, Any]]:
    meta, blocks = containers.decode_checkpoint(Path(path).read_bytes())
    cfg = ModelConfig.model_validate(meta["model_config"])
    model = RainNet(cfg, dtype=meta.get("dtype", "float32"), drop_input=meta.get("drop_input", ()))
    critic = Discriminator(cfg, dtype=meta.get("dtype", "float32"))
    model.load_state_dict({k[len("model/") :]: v for k, v in blocks.items() if k.startswith("model/")})
    critic.load_state_dict({k[len("critic/") :]: v for k, v in blocks.items() if k.startswith("critic/")})
    meta["optimizer_blocks"] = {k: v for k, v in blocks.items() if k.startswith("opt_")}
    return model, critic, meta


def train(
    manifest: DatasetManifest,
    model_cfg: ModelConfig,
    schedule: TrainSchedule,
    weights: LossWeights,
    out_dir: str | Path,
) -> dict[str, Any]:
    """Run the fixed validation budget and keep the checkpoint with the lowest validation total."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dtype = schedule.dtype
    rng = np.random.default_rng(schedule.seed)
    val_rng = np.random.default_rng([schedule.seed, 1])

    pixel_m = model_pixel_m(manifest.subset("train"), model_cfg.input_px)
    if model_cfg.pixel_m is not None and pixel_m is not None and not np.isclose(model_cfg.pixel_m, pixel_m):
        raise ConfigError(
            f"model.pixel_m {model_cfg.pixel_m} m disagrees with the training patches ({pixel_m:.3f} m per model pixel)"
        )
    if pixel_m is not None:
        model_cfg = model_cfg.model_copy(update={"pixel_m": pixel_m})

    model = RainNet(model_cfg, seed=schedule.seed, dtype=dtype, drop_input=schedule.drop_input)
    critic = Discriminator(model_cfg, seed=schedule.seed, dtype=dtype)
    hyper = dict(
        learning_rate=schedule.learning_rate,
        decay=schedule.decay,
        epsilon=schedule.epsilon,
        clip_norm=schedule.clip_norm,
        clip_mode=schedule.clip_mode,
    )
    opt_g = RMSProp(model.parameters(), **hyper)
    opt_d = RMSProp(critic.parameters(), **hyper)

    train_pools = class_pools(manifest.subset("train"), schedule.n_classes, merge_empty=True)
    val_records = manifest.subset("val")
    if not val_records:
        log.warning("validation_subset_empty", fallback="train")
        val_records = manifest.subset("train")
    val_pools = class_pools(val_records, schedule.n_classes, merge_empty=True)
    val_batches = [
        balanced_sample(val_pools, schedule.n_classes, schedule.per_class, val_rng)
        for _ in range(schedule.validation_batches)
    ]
    cache = PatchCache(model_cfg.input_px, schedule.cache_patches)

    log_path = out_dir / "training_log.csv"
    best_path = out_dir / "best.rsckpt"
    best_total = np.inf
    history: list[dict[str, float]] = []
    started = time.monotonic()
    step = 0
    log.info(
        "training_started",
        seed=schedule.seed,
        train_patches=len(manifest.subset("train")),
        val_patches=len(val_records),
        weights=weights.model_dump(),
        drop_input=schedule.drop_input,
    )

    with open(log_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        for validation in range(1, schedule.max_validations + 1):
            sums = dict.fromkeys([*LOSS_NAMES, "total", "critic"], 0.0)
            for _ in range(schedule.validation_every):
                step += 1
                records = balanced_sample(train_pools, schedule.n_classes, schedule.per_class, rng)
                batch = cache.batch(records)
                provenance = _provenance(f"validation {validation} step {step}", records)
                near = batch["distance"] < schedule.discriminator_max_km

                model.zero_grad()
                out = model(batch["image"], batch["scalars"])

                if weights.e > 0 and schedule.discriminator_steps > 0 and near.any():
                    real = Tensor(model.to_target(batch["rain"][near])[:, None], dtype=model.dtype)
                    fake = Tensor(out.y_rr.data[near], dtype=model.dtype)
                    for _ in range(schedule.discriminator_steps):
                        critic.zero_grad()
                        d_loss = critic_loss(critic, real, fake)
                        d_loss.backward()
                        opt_d.step()
                    sums["critic"] += float(d_loss.data)

                comps = loss_components(
                    batch["rain"],
                    out,
                    batch["mask"],
                    critic if weights.e > 0 else None,
                    near,
                    signed_mean=schedule.signed_mean_loss,
                    target=model.to_target,
                    provenance=provenance,
                )
                total = loss_total(comps, weights)
                total.backward()
                opt_g.step()
                critic.zero_grad()
                for k, v in as_floats(comps).items():
                    sums[k] += v
                sums["total"] += float(total.data)

            val_sums = dict.fromkeys([*LOSS_NAMES, "total"], 0.0)
            for i, records in enumerate(val_batches):
                values = _evaluate_batch(
                    model, critic, cache.batch(records), schedule, weights,
                    _provenance(f"validation {validation} batch {i}", records),
                )
                for k, v in values.items():
                    val_sums[k] += v
            n_train = schedule.validation_every
            n_val = max(1, len(val_batches))
            row = {"validation": validation, "step": step}
            row.update({f"train_{k}": sums[k] / n_train for k in LOSS_NAMES})
            row["train_total"] = sums["total"] / n_train
            row["critic_loss"] = sums["critic"] / n_train
            row.update({f"val_{k}": val_sums[k] / n_val for k in LOSS_NAMES})
            row["val_total"] = val_sums["total"] / n_val
            row["wall_clock_s"] = round(time.monotonic() - started, 3)
            writer.writerow(row)
            f.flush()
            history.append(row)

            improved = row["val_total"] < best_total
            if improved:
                best_total = row["val_total"]
                save_checkpoint(
                    best_path, model, critic, opt_g, opt_d, rng,
                    {"validation": validation, "step": step, "val_total": best_total,
                     "schedule": schedule.model_dump(mode="json"), "weights": weights.model_dump()},
                )
            log.info(
                "validation_completed",
                validation=validation,
                step=step,
                val_total=row["val_total"],
                val_rr=row["val_rr"],
                improved=improved,
            )

    last_path = save_checkpoint(
        out_dir / "last.rsckpt", model, critic, opt_g, opt_d, rng,
        {"validation": schedule.max_validations, "step": step,
         "schedule": schedule.model_dump(mode="json"), "weights": weights.model_dump()},
    )
    log.info("training_completed", best_val_total=best_total, steps=step)
    return {
        "best_checkpoint": str(best_path),
        "last_checkpoint": str(last_path),
        "log": str(log_path),
        "best_val_total": float(best_total),
        "history": history,
    }


def read_training_log(path: str | Path, include_wall_clock: bool = False) -> list[dict[str, str]]:
    """Rows of a training log; the wall-clock column is dropped unless requested."""
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    if not include_wall_clock:
        for r in rows:
            r.pop("wall_clock_s", None)
    return rows


def _train_one(args: tuple) -> dict[str, Any]:
    manifest_json, model_cfg, schedule, weights, out_dir = args
    manifest = DatasetManifest.model_validate(json.loads(manifest_json))
    result = train(manifest, model_cfg, schedule, weights, out_dir)
    result.pop("history", None)
    return result


def train_ensemble(
    manifest: DatasetManifest,
    model_cfg: ModelConfig,
    schedule: TrainSchedule,
    weights: LossWeights,
    out_dir: str | Path,
    seeds: Sequence[int],
    workers: int | None = None,
) -> list[dict[str, Any]]:
    """Independent trainings, one per seed, in ``out_dir/seed_<n>``; processes run in parallel."""
    out_dir = Path(out_dir)
    workers = workers or settings.workers
    manifest_json = manifest.model_dump_json()
    jobs = [
        (manifest_json, model_cfg, schedule.model_copy(update={"seed": s}), weights, out_dir / f"seed_{s}")
        for s in seeds
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_train_one, jobs))
    else:
        results = [_train_one(j) for j in jobs]
    log.info("ensemble_completed", runs=len(results), seeds=list(seeds))
    return results
