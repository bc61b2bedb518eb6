"""Tests for the training loop, its log and checkpoints."""

import numpy as np
import pytest

from rainsar.errors import ConfigError
from rainsar.models import DatasetManifest, LossWeights, TrainSchedule
from rainsar.nn.network import Discriminator, RainNet
from rainsar.nn.optim import RMSProp
from rainsar.services import containers
from rainsar.services.dataset import extract_patches
from rainsar.services.training import (
    LOG_COLUMNS,
    PatchCache,
    load_checkpoint,
    read_training_log,
    save_checkpoint,
    train,
    train_ensemble,
)
from tests.conftest import collocated_raster

SCHEDULE = TrainSchedule(
    batch_size=10, validation_every=2, validation_batches=2, max_validations=2, dtype="float64", seed=0
)


@pytest.fixture
def manifest(tmp_path):
    records = []
    for i, wind in enumerate((4.0, 9.0, 13.0)):
        rain = np.zeros((32, 32), dtype=np.float32)
        rain[:16, :16] = 8.0
        raster = collocated_raster(rows=32, cols=32, wind=wind, rain=rain, iw_id=f"IW{i}")
        path = containers.write_geo_raster(tmp_path / "data" / f"IW{i}.rsgeo", raster)
        records += extract_patches(raster, size_km=8.0, stride_km=8.0, raster_path=str(path))
    return DatasetManifest(records=records, split={"IW0": "train", "IW1": "val", "IW2": "test"})


def test_patch_cache_batches(manifest, tiny_cfg):
    cache = PatchCache(tiny_cfg.input_px)
    batch = cache.batch(manifest.records[:3])
    assert batch["image"].shape == (3, 3, 8, 8)
    assert batch["scalars"].shape == (3, 3)
    assert batch["rain"].shape == batch["mask"].shape == (3, 8, 8)
    assert cache.get(manifest.records[0]) is cache.get(manifest.records[0])



def test_patch_cache_drops_least_recently_used(manifest, tiny_cfg):
    a, b, c = manifest.records[:3]
    cache = PatchCache(tiny_cfg.input_px, max_entries=2)
    first = cache.get(a)
    cache.get(b)
    assert cache.get(a) is first
    cache.get(c)
    assert len(cache) == 2
    # b was the least recently used, so a is still cached
    assert cache.get(a) is first
    assert len(cache) == 2
    cache.batch(manifest.records)
    assert len(cache) == 2
    assert TrainSchedule().cache_patches > 0


def test_training_records_model_pixel_size(manifest, tiny_cfg, tmp_path):
    # 16 px patches at 500 m seen through an 8 px model grid
    result = train(manifest, tiny_cfg, SCHEDULE, LossWeights(), tmp_path / "run")
    model, _, _ = load_checkpoint(result["best_checkpoint"])
    assert model.cfg.pixel_m == pytest.approx(1000.0)
    assert model.cfg.input_px == tiny_cfg.input_px

    with pytest.raises(ConfigError, match="pixel_m"):
        train(manifest, tiny_cfg.model_copy(update={"pixel_m": 500.0}), SCHEDULE, LossWeights(), tmp_path / "bad")


def test_training_is_deterministic(manifest, tiny_cfg, tmp_path):
    a = train(manifest, tiny_cfg, SCHEDULE, LossWeights(), tmp_path / "a")
    b = train(manifest, tiny_cfg, SCHEDULE, LossWeights(), tmp_path / "b")
    rows_a, rows_b = read_training_log(a["log"]), read_training_log(b["log"])
    assert len(rows_a) == 2
    assert rows_a == rows_b
    assert "wall_clock_s" not in rows_a[0]
    assert list(read_training_log(a["log"], include_wall_clock=True)[0]) == LOG_COLUMNS
    assert [r["step"] for r in rows_a] == ["2", "4"]


def test_best_checkpoint_has_lowest_validation_total(manifest, tiny_cfg, tmp_path):
    result = train(manifest, tiny_cfg, SCHEDULE, LossWeights(), tmp_path)
    totals = [row["val_total"] for row in result["history"]]
    assert result["best_val_total"] == min(totals)
    _, _, meta = load_checkpoint(result["best_checkpoint"])
    assert meta["val_total"] == pytest.approx(min(totals))
    assert meta["validation"] == totals.index(min(totals)) + 1
    _, _, last = load_checkpoint(result["last_checkpoint"])
    assert last["step"] == 4


def test_checkpoint_roundtrip(tiny_cfg, tmp_path, rng):
    model = RainNet(tiny_cfg, seed=4, drop_input=["nesz"])
    critic = Discriminator(tiny_cfg, seed=4)
    opt_g, opt_d = RMSProp(model.parameters()), RMSProp(critic.parameters())
    path = save_checkpoint(tmp_path / "m.rsckpt", model, critic, opt_g, opt_d, rng, {"note": "x"})
    back, back_critic, meta = load_checkpoint(path)
    assert meta["note"] == "x"
    assert back.drop_input == ("nesz",)
    assert meta["optimizer"]["learning_rate"] == 1e-5
    x_im = rng.uniform(0.5, 2.0, (1, 3, 8, 8))
    x_sc = np.array([[35.0, -25.0, 8.0]])
    np.testing.assert_array_equal(back.predict(x_im, x_sc)[1], model.predict(x_im, x_sc)[1])
    for name, arr in critic.state_dict().items():
        np.testing.assert_array_equal(back_critic.state_dict()[name], arr)
    assert len(meta["optimizer_blocks"]) == len(model.parameters()) + len(critic.parameters())


def test_ablated_critic_is_skipped(manifest, tiny_cfg, tmp_path):
    result = train(manifest, tiny_cfg, SCHEDULE, LossWeights(e=0.0), tmp_path)
    rows = read_training_log(result["log"])
    assert all(float(r["critic_loss"]) == 0.0 for r in rows)
    assert all(float(r["train_D"]) == 0.0 for r in rows)


def test_ensemble_runs_one_directory_per_seed(manifest, tiny_cfg, tmp_path):
    schedule = SCHEDULE.model_copy(update={"max_validations": 1})
    results = train_ensemble(manifest, tiny_cfg, schedule, LossWeights(), tmp_path, seeds=[0, 1], workers=1)
    assert [r["best_checkpoint"] for r in results] == [
        str(tmp_path / "seed_0" / "best.rsckpt"),
        str(tmp_path / "seed_1" / "best.rsckpt"),
    ]
    assert all("history" not in r for r in results)
