"""Tests for the ablation rule pack."""

import pytest

from rainsar.errors import ConfigError
from rainsar.models import LossWeights
from rainsar.services.rule_loader import list_ablations, load_rule_pack, resolve_ablation


@pytest.fixture
def pack():
    return load_rule_pack()


def test_default_pack_lists_both_groups(pack):
    assert list_ablations(pack, "loss") == ["no_lrr", "no_lseg", "no_lmax", "no_lmean", "no_ld"]
    assert list_ablations(pack, "input") == ["no_vv", "no_vh", "no_mask", "no_inc", "no_nesz", "no_wspd"]
    names = list_ablations(pack)
    assert "full" in names
    assert "loss_ablation" not in names and "input_ablation" not in names


def test_loss_ablation_zeroes_one_term(pack):
    weights, drop = resolve_ablation(pack, "no_lmax")
    assert weights.c == 0.0
    assert weights.model_dump(exclude={"c"}) == LossWeights().model_dump(exclude={"c"})
    assert drop == []


def test_input_ablation_drops_one_input(pack):
    weights, drop = resolve_ablation(pack, "no_vh")
    assert drop == ["vh"]
    assert weights == LossWeights()
    assert resolve_ablation(pack, "full") == (LossWeights(), [])


def test_unknown_and_missing(pack, tmp_path):
    with pytest.raises(ConfigError, match="no_such"):
        resolve_ablation(pack, "no_such")
    with pytest.raises(ConfigError):
        load_rule_pack(tmp_path / "absent.yaml")


def test_extends_merges_and_detects_cycles(tmp_path):
    path = tmp_path / "pack.yaml"
    path.write_text(
        "defaults:\n"
        "  loss_weights: {e: 0.0}\n"
        "ablations:\n"
        "  base: {loss_weights: {a: 1.0}, drop_input: [nesz]}\n"
        "  child: {extends: base, loss_weights: {b: 0.5}}\n"
        "  loop_a: {extends: loop_b}\n"
        "  loop_b: {extends: loop_a}\n"
    )
    pack = load_rule_pack(path)
    weights, drop = resolve_ablation(pack, "child")
    assert (weights.a, weights.b, weights.e) == (1.0, 0.5, 0.0)
    assert drop == ["nesz"]
    with pytest.raises(ConfigError, match="Cyclic"):
        resolve_ablation(pack, "loop_a")
