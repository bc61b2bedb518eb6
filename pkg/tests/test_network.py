"""Tests for the encoder-decoder network and the critic."""

import numpy as np
import pytest

from rainsar.errors import ShapeMismatch
from rainsar.models import ModelConfig
from rainsar.nn.network import (
    Discriminator,
    RainNet,
    critic_parameter_count,
    discriminate,
    parameter_count,
)
from rainsar.nn.tensor import Tensor

SCALARS = np.array([[35.0, -25.0, 7.0], [31.0, -23.0, 12.0]])


def image(rng, n=2, h=8, w=8):
    return rng.uniform(0.5, 2.0, (n, 3, h, w))


def test_parameter_counts():
    assert parameter_count(ModelConfig()) == 485506
    assert parameter_count(ModelConfig(depth=1, base_channels=4, input_px=8)) == 1938
    assert critic_parameter_count(ModelConfig()) == 5921


def test_parameter_count_matches_built_model(tiny_cfg):
    for cfg in (tiny_cfg, ModelConfig(depth=2, base_channels=3, input_px=16, kernel_size=5)):
        model = RainNet(cfg)
        assert sum(p.data.size for p in model.parameters()) == parameter_count(cfg)
        assert len(model.named_parameters()) == len(model.parameters())
        critic = Discriminator(cfg)
        assert sum(p.data.size for p in critic.parameters()) == critic_parameter_count(cfg)


def test_output_shapes_and_ranges(tiny_cfg, rng):
    out = RainNet(tiny_cfg, dtype="float64")(image(rng), SCALARS)
    assert out.y_seg.shape == (2, 1, 8, 8)
    assert out.y_rr.shape == (2, 1, 8, 8)
    assert np.all((out.y_seg.data > 0) & (out.y_seg.data < 1))
    assert np.all(out.y_rr.data >= 0)


def test_zero_heads_with_relu_predict_no_rain(rng):
    cfg = ModelConfig(depth=1, base_channels=2, input_px=8, head_init="zero", rr_activation="relu")
    seg, rate = RainNet(cfg).predict(image(rng), SCALARS)
    np.testing.assert_array_equal(rate, 0.0)
    np.testing.assert_allclose(seg, 0.5)


def test_translation_by_one_stride_is_equivariant(tiny_cfg, rng):
    model = RainNet(tiny_cfg, seed=3, dtype="float64")
    wide = rng.uniform(0.5, 2.0, (1, 3, 8, 50))
    sc = SCALARS[:1]
    step = tiny_cfg.stride
    _, base = model.predict(wide[..., :48], sc)
    _, shifted = model.predict(wide[..., step : step + 48], sc)
    np.testing.assert_array_equal(shifted[..., 16:30], base[..., 16 + step : 30 + step])


def test_dropped_inputs_are_ignored(tiny_cfg, rng):
    model = RainNet(tiny_cfg, dtype="float64", drop_input=["vh", "inc"])
    x = image(rng)
    x_im, x_sc = model.prepare_inputs(x, SCALARS)
    assert np.all(x_im.data[:, 1] == 0)
    assert np.all(x_sc.data[:, 0] == 0)
    np.testing.assert_array_equal(x_im.data[:, 0], x[:, 0])

    other = x.copy()
    other[:, 1] = 9.0
    other_sc = SCALARS.copy()
    other_sc[:, 0] = 45.0
    for a, b in zip(model.predict(x, SCALARS), model.predict(other, other_sc)):
        np.testing.assert_array_equal(a, b)


def test_input_validation(tiny_cfg, rng):
    model = RainNet(tiny_cfg)
    with pytest.raises(ShapeMismatch):
        model(rng.normal(size=(2, 2, 8, 8)), SCALARS)
    with pytest.raises(ShapeMismatch):
        model(image(rng, h=9, w=9), SCALARS)
    with pytest.raises(ShapeMismatch):
        model(image(rng), SCALARS[:, :2])
    with pytest.raises(ShapeMismatch):
        model(image(rng), np.array([[35.0, np.nan, 7.0], [35.0, -25.0, 7.0]]))
    with pytest.raises(ValueError):
        ModelConfig(kernel_size=4)
    with pytest.raises(ValueError):
        ModelConfig(depth=3, input_px=12)


def test_state_dict_roundtrip(tiny_cfg, rng):
    a, b = RainNet(tiny_cfg, seed=0), RainNet(tiny_cfg, seed=1)
    x = image(rng)
    assert not np.allclose(a.predict(x, SCALARS)[1], b.predict(x, SCALARS)[1])
    b.load_state_dict(a.state_dict())
    np.testing.assert_array_equal(a.predict(x, SCALARS)[1], b.predict(x, SCALARS)[1])

    state = a.state_dict()
    state["rr_head.weight"] = np.zeros((2, 2, 1, 1))
    with pytest.raises(ShapeMismatch):
        b.load_state_dict(state)
    del state["rr_head.weight"]
    with pytest.raises(ShapeMismatch):
        b.load_state_dict(state)


def test_discriminate(tiny_cfg, rng):
    critic = Discriminator(tiny_cfg, zero_init=True)
    assert discriminate(critic, rng.uniform(size=(8, 8))) == 0.0
    score = discriminate(Discriminator(tiny_cfg), rng.uniform(size=(8, 8)), expected_shape=(8, 8))
    assert np.isfinite(score)
    with pytest.raises(ShapeMismatch):
        discriminate(critic, rng.uniform(size=(8, 8)), expected_shape=(16, 16))
    with pytest.raises(ShapeMismatch):
        critic.score_map(Tensor(np.zeros((1, 2, 8, 8))))


def constant_state(module, value=0.1):
    return {
        name: np.full(p.shape, value if name.endswith(".weight") else 0.0)
        for name, p in module.named_parameters().items()
    }


def test_forward_golden_value_with_constant_weights(tiny_cfg):
    model = RainNet(tiny_cfg, dtype="float64")
    state = constant_state(model)
    state["seg_head.weight"][...] = 0.001
    state["seg_head.bias"][...] = -0.1
    state["rr_head.weight"][...] = 0.01
    model.load_state_dict(state)
    x_sc = np.array([tiny_cfg.scalar_offsets])
    out = model(np.ones((1, 3, 24, 24)), x_sc)
    # centre pixel, away from every zero-padded border:
    # enc 2.7 -> 4.86, bottleneck 8.748 -> 31.4928, up 12.59712, dec 31.422816 -> 56.5610688
    assert out.seg_logits.data[0, 0, 12, 12] == pytest.approx(0.0131221376, rel=1e-10)
    assert out.y_rr.data[0, 0, 12, 12] == pytest.approx(np.log1p(np.exp(1.131221376)), rel=1e-12)


def test_discriminate_golden_value_with_constant_weights(tiny_cfg):
    critic = Discriminator(tiny_cfg, dtype="float64")
    state = constant_state(critic)
    state["disc_score.weight"][...] = 0.5
    state["disc_score.bias"][...] = -1.0
    critic.load_state_dict(state)
    # stride-2 windows cover 2, 3, 3, 3 valid rows (and columns): mean conv output 0.1 * 2.75**2
    assert discriminate(critic, np.ones((8, 8))) == pytest.approx(2 * 0.5 * 0.1 * 2.75**2 - 1.0, rel=1e-12)


def test_seeded_builds_are_bitwise_deterministic(tiny_cfg, rng):
    x = image(rng)
    a = RainNet(tiny_cfg, seed=5).predict(x, SCALARS)
    b = RainNet(tiny_cfg, seed=5).predict(x, SCALARS)
    for left, right in zip(a, b):
        np.testing.assert_array_equal(left, right)
    rain = rng.uniform(size=(8, 8))
    assert discriminate(Discriminator(tiny_cfg, seed=5), rain) == discriminate(Discriminator(tiny_cfg, seed=5), rain)
