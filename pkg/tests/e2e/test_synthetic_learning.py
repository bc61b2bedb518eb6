"""End-to-end learning on synthetic scenes: dataset, training and held-out evaluation.

Slow; run with: pytest tests/e2e -m slow
"""

import numpy as np
import pytest

from rainsar.config import DatasetConfig
from rainsar.models import LossWeights, ModelConfig, SceneParams, TrainSchedule
from rainsar.services.evaluation import categorize, prf, rain_area_fraction
from rainsar.services.inference import load_models, predict_patches
from rainsar.services.synthetic import synth_dataset
from rainsar.services.training import read_training_log, train

pytestmark = pytest.mark.slow

SCENES = SceneParams(n_cells=(1, 4), jitter_km=(0.0, 2.0), wind_spread=4.0)
MODEL = ModelConfig(depth=2, base_channels=8, input_px=32, discriminator_widths=(8, 16))
SCHEDULE = TrainSchedule(validation_every=50, validation_batches=8, max_validations=100, learning_rate=1e-3)


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    return synth_dataset(SCENES, 80, out, DatasetConfig(cap_fraction=1.0), seed=0, polar_scans=False, workers=1)


def _held_out(result, manifest):
    models = load_models([result["best_checkpoint"]])
    return predict_patches(models, manifest.subset("test"))


def test_training_reaches_high_f1_and_halves_rr(manifest, tmp_path):
    assert len(manifest.records) >= 2000
    result = train(manifest, MODEL, SCHEDULE, LossWeights(), tmp_path)
    rows = read_training_log(result["log"])
    first_rr, best_rr = float(rows[0]["val_rr"]), min(float(r["val_rr"]) for r in rows)
    assert best_rr <= 0.5 * first_rr

    preds = _held_out(result, manifest)
    z = [categorize(p.truth, mask=p.mask) for p in preds]
    zh = [categorize(p.pred, mask=p.mask) for p in preds]
    assert prf(z, zh).f1 > 0.9


def test_without_max_term_rain_area_collapses(manifest, tmp_path):
    result = train(manifest, MODEL, SCHEDULE, LossWeights(c=0.0), tmp_path)
    preds = _held_out(result, manifest)
    truth_area = np.sum([rain_area_fraction(p.truth, mask=p.mask) for p in preds])
    pred_area = np.sum([rain_area_fraction(p.pred, mask=p.mask) for p in preds])
    assert truth_area > 0
    assert pred_area < 0.1 * truth_area
