"""Command-line entry point: collocate, build-dataset, train, evaluate, infer, synth."""

import argparse
import json
import sys
from pathlib import Path
from typing import Any

import structlog
import yaml
from pydantic import ValidationError

from rainsar import __version__
from rainsar.config import RunConfig, apply_overrides, settings
from rainsar.errors import EXIT_OK, EXIT_VALIDATION, ConfigError, DataError, RainSarError
from rainsar.log import configure_logging
from rainsar.models import DatasetManifest, LossWeights, MetricsReport
from rainsar.services.collocation import collocate
from rainsar.services.dataset import build_dataset, class_table
from rainsar.services.evaluation import (
    ablation_table,
    bin_label,
    categorize,
    evaluate_patches,
    wind_binned_metrics,
    write_report,
)
from rainsar.services.inference import infer_file, load_models, predict_patches
from rainsar.services.rule_loader import load_rule_pack, resolve_ablation
from rainsar.services.synthetic import synth_dataset
from rainsar.services.training import train, train_ensemble

log = structlog.get_logger(__name__)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def _names(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON or YAML run configuration")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="dotted override, repeatable")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int, help="defaults to RAINSAR_WORKERS")
    common.add_argument("--log-level", default="INFO")
    common.add_argument("--log-json", action="store_true")

    parser = argparse.ArgumentParser(prog="rainsar", description="SAR rainfall estimation toolkit")
    parser.add_argument("--version", action="version", version=f"rainsar {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("collocate", parents=[common], help="pair SAR rasters with radar scans")
    p.add_argument("--sar-dir", type=Path, required=True)
    p.add_argument("--radar-dir", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--window-s", type=float)

    p = sub.add_parser("build-dataset", parents=[common], help="extract, label, cap and partition patches")
    p.add_argument(
        "--input-dir", "--input", dest="input", type=Path, required=True, help="directory of collocated rasters"
    )
    p.add_argument("--manifest-out", type=Path, help="manifest path; defaults to OUT/manifest.json")
    p.add_argument("--out", type=Path, help="output directory; defaults to the manifest's directory")
    p.add_argument("--cap", type=float, help="kept fraction of no-rain patches per wind bin")
    p.add_argument("--bin", type=float, help="wind bin width for the no-rain cap, m/s")

    p = sub.add_parser("train", parents=[common], help="train one model or a seed ensemble")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out-dir", "--out", dest="out", type=Path, required=True)
    p.add_argument("--loss-weights", help="a,b,c,d,e; fractions such as 1/15 are accepted")
    p.add_argument("--drop-input", type=_names, help="comma-separated inputs to zero (vv,vh,mask,inc,nesz,wspd)")
    p.add_argument("--ablation", help="named variant from the ablation rule pack")
    p.add_argument("--rule-pack", type=Path)
    p.add_argument("--ensemble-size", type=int)

    p = sub.add_parser("evaluate", parents=[common], help="metrics on a manifest subset")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument(
        "--checkpoint", "--checkpoints", type=Path, action="append", default=[], help="repeat for an ensemble"
    )
    p.add_argument(
        "--compare", action="append", default=[], metavar="NAME=CHECKPOINT",
        help="one run of a named configuration for the ablation table, repeatable",
    )
    p.add_argument("--report-out", "--out", dest="out", type=Path, required=True, help="report directory")
    p.add_argument("--subset", default="test", choices=["train", "val", "test"])
    p.add_argument("--thresholds", type=_floats)
    p.add_argument("--wind-bins", type=_floats)

    p = sub.add_parser("infer", parents=[common], help="rain-rate raster over a full scene")
    p.add_argument("--checkpoint", type=Path, action="append", required=True)
    p.add_argument("--raster", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--blending", choices=["uniform", "cosine"])

    p = sub.add_parser("synth", parents=[common], help="write synthetic scenes and their dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n-scenes", type=int)
    p.add_argument("--no-polar", action="store_true", help="skip polar scan containers")
    return parser


def _set(data: dict[str, Any], dotted: str, value: Any) -> None:
    cur = data
    parts = dotted.split(".")
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = value


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """File, then ``--set`` overrides, then subcommand flags; validated once at the end."""
    data: dict[str, Any] = {}
    if args.config is not None:
        if not args.config.exists():
            raise ConfigError(f"Config file not found: {args.config}")
        data = yaml.safe_load(args.config.read_text(encoding="utf-8")) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"Config file must hold a mapping: {args.config}")
    apply_overrides(data, args.set)
    data["subcommand"] = args.subcommand
    if args.seed is not None:
        data["seed"] = args.seed
        _set(data, "training.schedule.seed", args.seed)
        _set(data, "synthetic.scene.seed", args.seed)

    flags = {
        "window_s": "collocation.window_s",
        "ensemble_size": "training.ensemble_size",
        "ablation": "training.ablation",
        "thresholds": "evaluation.thresholds",
        "wind_bins": "evaluation.wind_bins",
        "blending": "inference.blending",
        "n_scenes": "synthetic.n_scenes",
        "cap": "dataset.cap_fraction",
        "bin": "dataset.cap_bin_width",
    }
    for attr, dotted in flags.items():
        value = getattr(args, attr, None)
        if value is not None:
            _set(data, dotted, value)
    if getattr(args, "loss_weights", None):
        _set(data, "training.weights", LossWeights.parse(args.loss_weights).model_dump())
    if getattr(args, "drop_input", None) is not None:
        _set(data, "training.schedule.drop_input", args.drop_input)
    if getattr(args, "no_polar", False):
        _set(data, "synthetic.polar_scans", False)
    data["paths"] = {k: str(v) for k, v in vars(args).items() if isinstance(v, Path)}
    return RunConfig.model_validate(data)


def write_snapshot(cfg: RunConfig, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "resolved_config.json"
    path.write_text(cfg.model_dump_json(indent=1), encoding="utf-8")
    return path


# --- Subcommands ---
def run_collocate(args: argparse.Namespace, cfg: RunConfig, workers: int) -> None:
    write_snapshot(cfg, args.out)
    collocate(args.sar_dir, args.radar_dir, args.out, cfg.collocation, cfg.gmf, workers)


def run_build_dataset(args: argparse.Namespace, cfg: RunConfig, workers: int) -> None:
    if args.manifest_out is None and args.out is None:
        raise ConfigError("build-dataset needs --manifest-out or --out")
    manifest_path = args.manifest_out or args.out / "manifest.json"
    out_dir = args.out or manifest_path.parent
    write_snapshot(cfg, out_dir)
    manifest = build_dataset(args.input, manifest_path, cfg.dataset, cfg.seed, workers)
    (out_dir / "class_table.json").write_text(json.dumps(class_table(manifest), indent=1), encoding="utf-8")


def run_train(args: argparse.Namespace, cfg: RunConfig, workers: int) -> None:
    schedule = cfg.training.schedule
    weights = cfg.training.weights
    if cfg.training.ablation:
        weights, drop = resolve_ablation(load_rule_pack(args.rule_pack), cfg.training.ablation)
        schedule = schedule.model_copy(update={"drop_input": sorted(set(schedule.drop_input) | set(drop))})
        cfg = cfg.model_copy(
            update={"training": cfg.training.model_copy(update={"weights": weights, "schedule": schedule})}
        )
    write_snapshot(cfg, args.out)
    manifest = DatasetManifest.load(args.manifest)
    if cfg.training.ensemble_size > 1:
        seeds = [schedule.seed + i for i in range(cfg.training.ensemble_size)]
        results = train_ensemble(manifest, cfg.model, schedule, weights, args.out, seeds, workers)
    else:
        result = train(manifest, cfg.model, schedule, weights, args.out)
        result.pop("history", None)
        results = [result]
    (args.out / "runs.json").write_text(json.dumps(results, indent=1), encoding="utf-8")


def _compare_runs(compare: list[str], records, cfg: RunConfig) -> list[dict[str, Any]]:
    ev = cfg.evaluation
    runs: dict[str, list[list[float | None]]] = {}
    for item in compare:
        if "=" not in item:
            raise ConfigError(f"--compare must look like NAME=CHECKPOINT: {item!r}")
        name, path = item.split("=", 1)
        preds = predict_patches(load_models([path]), records)
        z = [categorize(p.truth, ev.rain_threshold_mmh, ev.area_fraction, p.mask) for p in preds]
        zh = [categorize(p.pred, ev.rain_threshold_mmh, ev.area_fraction, p.mask) for p in preds]
        bins = wind_binned_metrics(z, zh, [p.wind_prior for p in preds], ev.wind_bins, n_resamples=0)
        runs.setdefault(name, []).append([b.prf.f1 for b in bins])
    labels = [bin_label(lo, hi) for lo, hi in zip(ev.wind_bins[:-1], ev.wind_bins[1:])]
    return ablation_table(runs, labels)


def run_evaluate(args: argparse.Namespace, cfg: RunConfig, workers: int) -> None:
    if not args.checkpoint and not args.compare:
        raise ConfigError("evaluate needs --checkpoint or --compare")
    write_snapshot(cfg, args.out)
    manifest = DatasetManifest.load(args.manifest)
    records = manifest.subset(args.subset)
    if not records:
        raise DataError(f"Subset {args.subset!r} of {args.manifest} holds no patches")
    report = None
    if args.checkpoint:
        preds = predict_patches(load_models(args.checkpoint), records, cfg.evaluation.relative_std_epsilon)
        report = evaluate_patches(preds, cfg.evaluation, cfg.seed)
    ablation = _compare_runs(args.compare, records, cfg) if args.compare else None
    if report is None:
        report = MetricsReport(config=cfg.evaluation.model_dump(mode="json"))
    write_report(report, args.out, ablation)


def run_infer(args: argparse.Namespace, cfg: RunConfig, workers: int) -> None:
    write_snapshot(cfg, args.out.parent)
    infer_file(args.checkpoint, args.raster, args.out, cfg.inference)


def run_synth(args: argparse.Namespace, cfg: RunConfig, workers: int) -> None:
    write_snapshot(cfg, args.out)
    synth_dataset(
        cfg.synthetic.scene, cfg.synthetic.n_scenes, args.out, cfg.dataset, cfg.seed, cfg.synthetic.polar_scans, workers
    )


COMMANDS = {
    "collocate": run_collocate,
    "build-dataset": run_build_dataset,
    "train": run_train,
    "evaluate": run_evaluate,
    "infer": run_infer,
    "synth": run_synth,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level, args.log_json)
    try:
        cfg = resolve_config(args)
        workers = args.workers or settings.workers
        if workers < 1:
            raise ConfigError("--workers must be >= 1")
        log.info("run_started", subcommand=args.subcommand, seed=cfg.seed, workers=workers, version=__version__)
        COMMANDS[args.subcommand](args, cfg, workers)
    except ValidationError as e:
        log.error("invalid_configuration", errors=e.error_count(), detail=str(e))
        return EXIT_VALIDATION
    except RainSarError as e:
        log.error("run_failed", error=type(e).__name__, detail=str(e), exit_code=e.exit_code)
        return e.exit_code
    except ValueError as e:
        log.error("invalid_argument", detail=str(e))
        return EXIT_VALIDATION
    log.info("run_completed", subcommand=args.subcommand)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
