"""Load the ablation rule pack and resolve named training variants."""

from pathlib import Path
from typing import Any

import yaml

from rainsar.errors import ConfigError
from rainsar.models import LossWeights

DEFAULT_PACK = Path(__file__).parent.parent.parent / "rule_packs" / "ablations.yaml"


def load_rule_pack(path: str | Path | None = None) -> dict[str, Any]:
    """Load an ablation rule pack from YAML."""
    path = Path(path) if path is not None else DEFAULT_PACK
    if not path.exists():
        raise ConfigError(f"Rule pack not found: {path}")
    with open(path, encoding="utf-8") as f:
        return yaml.safe_load(f) or {}


def _entry(rule_pack: dict, name: str, seen: tuple[str, ...] = ()) -> dict[str, Any]:
    ablations = rule_pack.get("ablations", {})
    if name not in ablations:
        raise ConfigError(f"Unknown ablation {name!r} (available: {', '.join(list_ablations(rule_pack))})")
    if name in seen:
        raise ConfigError(f"Cyclic extends chain: {' -> '.join((*seen, name))}")
    cfg = ablations[name] or {}
    # Handle extends
    merged: dict[str, Any] = {}
    extends = cfg.get("extends")
    if extends:
        merged = _entry(rule_pack, extends, (*seen, name))
    for key, value in cfg.items():
        if key == "loss_weights":
            merged["loss_weights"] = {**merged.get("loss_weights", {}), **value}
        elif key not in ("extends", "abstract"):
            merged[key] = value
    return merged


def list_ablations(rule_pack: dict, group: str | None = None) -> list[str]:
    """Launchable (non-abstract) variant names, optionally of one group."""
    names = []
    for name in rule_pack.get("ablations", {}):
        cfg = rule_pack["ablations"][name] or {}
        if cfg.get("abstract"):
            continue
        if group is not None and _entry(rule_pack, name).get("group") != group:
            continue
        names.append(name)
    return names


def resolve_ablation(rule_pack: dict, name: str) -> tuple[LossWeights, list[str]]:
    """Loss weights and dropped inputs of a variant, defaults filled in."""
    cfg = _entry(rule_pack, name)
    defaults = rule_pack.get("defaults", {})
    weights = {**defaults.get("loss_weights", {}), **cfg.get("loss_weights", {})}
    drop = list(cfg.get("drop_input", defaults.get("drop_input", [])))
    return LossWeights(**weights), drop
