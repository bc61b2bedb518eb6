"""Categorical and regression metrics, grouped analysis and report writing.

Undefined values (no predicted positives, single-class bins) are reported
as ``None`` rather than 0/0.
"""

import csv
import json
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import structlog
from scipy import stats

from rainsar.config import EvaluationConfig
from rainsar.errors import DegenerateInput, ShapeMismatch
from rainsar.models import ConfidenceInterval, GroupMetrics, MetricsReport, PrfResult, ScatterStats, ThresholdRow

log = structlog.get_logger(__name__)


@dataclass
class PatchPrediction:
    key: str
    truth: np.ndarray  # mm/h
    pred: np.ndarray  # mm/h
    mask: np.ndarray  # 1 = ocean
    wind_prior: float = 0.0
    iw_id: str = ""
    station_id: str = ""
    processing_version: str = ""
    center_lat: float = 0.0
    center_lon: float = 0.0
    relative_std: float | None = None


# --- patch categorization ---
def rain_area_fraction(rate: np.ndarray, threshold_mmh: float = 3.0, mask: np.ndarray | None = None) -> float:
    rate = np.nan_to_num(np.asarray(rate, dtype=np.float64), nan=0.0)
    ocean = np.ones(rate.shape, dtype=bool) if mask is None else np.asarray(mask) > 0
    n = int(ocean.sum())
    if n == 0:
        return 0.0
    return int(((rate > threshold_mmh) & ocean).sum()) / n


def categorize(
    pred_rr: np.ndarray,
    threshold_mmh: float = 3.0,
    area_fraction: float = 0.05,
    mask: np.ndarray | None = None,
) -> bool:
    """True when more than ``area_fraction`` of ocean pixels exceed ``threshold_mmh``."""
    return rain_area_fraction(pred_rr, threshold_mmh, mask) > area_fraction


# --- precision / recall / F1 ---
def prf(z: Sequence[bool], z_hat: Sequence[bool], weights: Sequence[float] | None = None) -> PrfResult:
    z = np.asarray(z, dtype=bool)
    z_hat = np.asarray(z_hat, dtype=bool)
    if z.shape != z_hat.shape:
        raise ShapeMismatch(f"prf: truth {z.shape} and prediction {z_hat.shape} differ")
    w = np.ones(z.shape) if weights is None else np.asarray(weights, dtype=np.float64)
    tp = float(w[z & z_hat].sum())
    fp = float(w[~z & z_hat].sum())
    fn = float(w[z & ~z_hat].sum())
    tn = float(w[~z & ~z_hat].sum())
    precision = tp / (tp + fp) if tp + fp > 0 else None
    recall = tp / (tp + fn) if tp + fn > 0 else None
    if recall is None:
        f1 = None
    elif precision is None or precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return PrfResult(precision=precision, recall=recall, f1=f1, tp=tp, fp=fp, fn=fn, tn=tn)


def likelihood_weights(z: Sequence[bool], reference_prevalence: float) -> np.ndarray | None:
    """Per-patch weights moving the rain prevalence of ``z`` to the reference.

    Rain patches get pi_ref / pi_bin and rainless ones (1 - pi_ref) / (1 - pi_bin),
    which keeps the total weight equal to the patch count. None for a
    single-class set.
    """
    z = np.asarray(z, dtype=bool)
    if z.size == 0:
        return None
    p_bin = float(z.mean())
    if p_bin in (0.0, 1.0):
        return None
    return np.where(z, reference_prevalence / p_bin, (1.0 - reference_prevalence) / (1.0 - p_bin))


# --- bootstrap ---
def bootstrap_ci(
    metric_fn: Callable[..., float | None],
    samples: np.ndarray | Sequence[np.ndarray],
    n_resamples: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    vectorized: bool = False,
) -> ConfidenceInterval:
    """Percentile interval over seeded resamples with replacement.

    ``samples`` is an array or a tuple of aligned arrays resampled jointly.
    With ``vectorized`` the metric receives [n_resamples, n] arrays and
    returns one value per resample. Undefined resample values are ignored.
    """
    arrays = [np.asarray(samples)] if isinstance(samples, np.ndarray) else [np.asarray(a) for a in samples]
    n = len(arrays[0])
    if n == 0:
        return ConfidenceInterval()
    rng = np.random.default_rng(seed)
    idx = rng.integers(n, size=(n_resamples, n))
    if vectorized:
        values = np.asarray(metric_fn(*[a[idx] for a in arrays]), dtype=np.float64)
    else:
        values = np.array(
            [np.nan if (v := metric_fn(*[a[row] for a in arrays])) is None else float(v) for row in idx]
        )
    values = values[np.isfinite(values)]
    if values.size == 0:
        return ConfidenceInterval()
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(values, [100 * alpha, 100 * (1 - alpha)])
    return ConfidenceInterval(lo=float(lo), hi=float(hi), std=float(values.std()))


def _f1_of(z: np.ndarray, z_hat: np.ndarray) -> float | None:
    return prf(z, z_hat).f1


def _weighted_f1(reference: float) -> Callable[[np.ndarray, np.ndarray], float | None]:
    def fn(z: np.ndarray, z_hat: np.ndarray) -> float | None:
        w = likelihood_weights(z, reference)
        return None if w is None else prf(z, z_hat, w).f1

    return fn


# --- wind-binned metrics ---
def bin_label(lo: float, hi: float) -> str:
    return f"{lo:g}-{hi:g}"



def _warn_outside_bins(wind: np.ndarray, bin_edges: Sequence[float], source: str) -> None:
    outside = int(np.sum(~((wind >= bin_edges[0]) & (wind < bin_edges[-1]))))
    if outside:
        log.warning(
            "patches_outside_wind_bins", source=source, dropped=outside, total=int(wind.size),
            lo=float(bin_edges[0]), hi=float(bin_edges[-1]),
        )


def wind_binned_metrics(
    z: Sequence[bool],
    z_hat: Sequence[bool],
    wind: Sequence[float],
    bin_edges: Sequence[float] = (0.0, 4.0, 8.0, 12.0, 16.0, 20.0),
    reference_prevalence: float | None = None,
    n_resamples: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> list[GroupMetrics]:
    """Likelihood-weighted PRF per wind bin [lo, hi) with a bootstrap CI on F1.

    The reference prevalence defaults to the prevalence over all patches.
    """
    z = np.asarray(z, dtype=bool)
    z_hat = np.asarray(z_hat, dtype=bool)
    wind = np.asarray(wind, dtype=np.float64)
    if reference_prevalence is None:
        reference_prevalence = float(z.mean()) if z.size else 0.0
    _warn_outside_bins(wind, bin_edges, "wind_binned_metrics")
    out: list[GroupMetrics] = []
    for i, (lo, hi) in enumerate(zip(bin_edges[:-1], bin_edges[1:])):
        sel = (wind >= lo) & (wind < hi)
        label = bin_label(lo, hi)
        zb, zhb = z[sel], z_hat[sel]
        group = GroupMetrics(
            group="wind_bin", key=label, prf=PrfResult(), n_patches=int(sel.sum()),
            n_rain_true=int(zb.sum()), n_rain_pred=int(zhb.sum()),
        )
        w = likelihood_weights(zb, reference_prevalence)
        if w is None:
            group.diagnostic = "empty bin" if zb.size == 0 else "single-class bin"
            out.append(group)
            continue
        group.prf = prf(zb, zhb, w)
        group.f1_ci = bootstrap_ci(_weighted_f1(reference_prevalence), (zb, zhb), n_resamples, level, seed + i)
        out.append(group)
    return out


# --- regression statistics ---
def scatter_stats(max_true: Sequence[float], max_pred: Sequence[float]) -> ScatterStats:
    """PCC, RMSE and least-squares slope of prediction on truth."""
    t = np.asarray(max_true, dtype=np.float64)
    p = np.asarray(max_pred, dtype=np.float64)
    if t.shape != p.shape:
        raise ShapeMismatch(f"scatter_stats: {t.shape} vs {p.shape}")
    if t.size < 2:
        raise DegenerateInput("scatter_stats needs at least two points")
    if np.ptp(t) == 0 or np.ptp(p) == 0:
        raise DegenerateInput("scatter_stats is undefined for a constant series")
    fit = stats.linregress(t, p)
    rmse = float(np.sqrt(np.mean((p - t) ** 2)))
    return ScatterStats(pcc=float(fit.rvalue), rmse=rmse, slope=float(fit.slope), intercept=float(fit.intercept), n=int(t.size))


def ensemble_stats(runs: Sequence[np.ndarray], epsilon: float = 1e-6) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-pixel mean, population std and std/mean (NaN where the mean is below ``epsilon``)."""
    if len(runs) < 2:
        raise ShapeMismatch(f"ensemble_stats needs at least 2 runs, got {len(runs)}")
    shapes = {np.shape(r) for r in runs}
    if len(shapes) != 1:
        raise ShapeMismatch(f"ensemble runs have different shapes: {sorted(shapes)}")
    stack = np.stack([np.asarray(r, dtype=np.float64) for r in runs])
    mean = stack.mean(axis=0)
    std = stack.std(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(mean >= epsilon, std / np.where(mean >= epsilon, mean, 1.0), np.nan)
    return mean, std, rel


# --- threshold sweep ---
def threshold_sweep(
    patches: Sequence[PatchPrediction],
    thresholds: Sequence[float] = (1.0, 3.0, 10.0),
    wind_bins: Sequence[float] = (0.0, 4.0, 8.0, 12.0, 16.0, 20.0),
    area_fraction: float = 0.05,
) -> tuple[list[ThresholdRow], dict[str, float | None]]:
    """PRF per (wind bin, threshold) plus the best-F1 threshold per bin (first maximum wins)."""
    if any(b <= a for a, b in zip(thresholds[:-1], thresholds[1:])):
        raise ValueError("thresholds must be strictly ascending")
    wind = np.array([p.wind_prior for p in patches], dtype=np.float64)
    _warn_outside_bins(wind, wind_bins, "threshold_sweep")
    truth_frac = np.array([[rain_area_fraction(p.truth, t, p.mask) for t in thresholds] for p in patches])
    pred_frac = np.array([[rain_area_fraction(p.pred, t, p.mask) for t in thresholds] for p in patches])
    truth_frac = truth_frac.reshape(len(patches), len(thresholds))
    pred_frac = pred_frac.reshape(len(patches), len(thresholds))

    groups = [("all", np.ones(len(patches), dtype=bool))]
    groups += [(bin_label(lo, hi), (wind >= lo) & (wind < hi)) for lo, hi in zip(wind_bins[:-1], wind_bins[1:])]
    rows: list[ThresholdRow] = []
    best: dict[str, float | None] = {}
    for label, sel in groups:
        best_f1, best_t = -1.0, None
        for j, t in enumerate(thresholds):
            result = prf(truth_frac[sel, j] > area_fraction, pred_frac[sel, j] > area_fraction)
            rows.append(ThresholdRow(wind_bin=label, threshold=float(t), prf=result))
            if result.f1 is not None and result.f1 > best_f1:
                best_f1, best_t = result.f1, float(t)
        best[label] = best_t
    return rows, best


# --- grouped analysis ---
def region_key(lat: float, lon: float, stride_deg: float = 4.0) -> str:
    """Label of the fixed-stride lat/lon cell containing a point (south-west corner)."""
    return f"{math.floor(lat / stride_deg) * stride_deg:+g},{math.floor(lon / stride_deg) * stride_deg:+g}"


def group_metrics(
    patches: Sequence[PatchPrediction],
    key_fn: Callable[[PatchPrediction], str],
    group: str,
    cfg: EvaluationConfig | None = None,
    seed: int = 0,
) -> list[GroupMetrics]:
    """PRF, F1 bootstrap spread, rain fractions and mean rainfall per group key."""
    cfg = cfg or EvaluationConfig()
    buckets: dict[str, list[PatchPrediction]] = {}
    for p in patches:
        buckets.setdefault(key_fn(p), []).append(p)
    out = []
    for i, key in enumerate(sorted(buckets)):
        items = buckets[key]
        z = np.array([categorize(p.truth, cfg.rain_threshold_mmh, cfg.area_fraction, p.mask) for p in items])
        zh = np.array([categorize(p.pred, cfg.rain_threshold_mmh, cfg.area_fraction, p.mask) for p in items])
        mean_true = [float(np.nanmean(np.where(p.mask > 0, p.truth, np.nan))) for p in items if (p.mask > 0).any()]
        mean_pred = [float(np.nanmean(np.where(p.mask > 0, p.pred, np.nan))) for p in items if (p.mask > 0).any()]
        out.append(
            GroupMetrics(
                group=group,
                key=key,
                prf=prf(z, zh),
                f1_ci=bootstrap_ci(_f1_of, (z, zh), cfg.n_resamples, cfg.confidence, seed + i),
                n_patches=len(items),
                n_rain_true=int(z.sum()),
                n_rain_pred=int(zh.sum()),
                rain_fraction_true=float(z.mean()),
                rain_fraction_pred=float(zh.mean()),
                mean_rain_true=float(np.mean(mean_true)) if mean_true else None,
                mean_rain_pred=float(np.mean(mean_pred)) if mean_pred else None,
            )
        )
    return out


def rate_histogram(patches: Sequence[PatchPrediction], edges: Sequence[float] | None = None) -> dict[str, list[float]]:
    """Pixel counts of truth and prediction over ocean pixels."""
    edges = np.asarray(edges if edges is not None else [0, 0.5, 1, 2, 3, 5, 10, 20, 50, 100, np.inf], dtype=np.float64)
    truth = np.concatenate([np.nan_to_num(p.truth[p.mask > 0]) for p in patches]) if patches else np.zeros(0)
    pred = np.concatenate([p.pred[p.mask > 0] for p in patches]) if patches else np.zeros(0)
    return {
        "edges": [float(e) for e in edges],
        "truth": np.histogram(truth, edges)[0].astype(float).tolist(),
        "pred": np.histogram(pred, edges)[0].astype(float).tolist(),
    }


def evaluate_patches(
    patches: Sequence[PatchPrediction],
    cfg: EvaluationConfig | None = None,
    seed: int = 0,
) -> MetricsReport:
    cfg = cfg or EvaluationConfig()
    z = np.array([categorize(p.truth, cfg.rain_threshold_mmh, cfg.area_fraction, p.mask) for p in patches], dtype=bool)
    zh = np.array([categorize(p.pred, cfg.rain_threshold_mmh, cfg.area_fraction, p.mask) for p in patches], dtype=bool)
    wind = np.array([p.wind_prior for p in patches], dtype=np.float64)

    report = MetricsReport(
        overall=prf(z, zh),
        wind_bins=wind_binned_metrics(z, zh, wind, cfg.wind_bins, None, cfg.n_resamples, cfg.confidence, seed),
        stations=group_metrics(patches, lambda p: p.station_id or "-", "station", cfg, seed),
        processing_versions=group_metrics(patches, lambda p: p.processing_version or "-", "processing_version", cfg, seed),
        regions=group_metrics(
            patches, lambda p: region_key(p.center_lat, p.center_lon, cfg.region_stride_deg), "region", cfg, seed
        ),
        rate_histogram=rate_histogram(patches),
        config=cfg.model_dump(mode="json"),
    )
    max_true = [float(np.nan_to_num(p.truth[p.mask > 0]).max()) for p in patches if (p.mask > 0).any()]
    max_pred = [float(p.pred[p.mask > 0].max()) for p in patches if (p.mask > 0).any()]
    try:
        report.scatter = scatter_stats(max_true, max_pred)
    except DegenerateInput as e:
        log.warning("scatter_undefined", reason=str(e))
    report.threshold_sweep, report.best_thresholds = threshold_sweep(
        patches, cfg.thresholds, cfg.wind_bins, cfg.area_fraction
    )
    rel = [p.relative_std for p in patches if p.relative_std is not None]
    if rel:
        report.ensemble = {"mean_relative_std": float(np.mean(rel)), "patches": float(len(rel))}
    log.info(
        "evaluation_completed",
        patches=len(patches),
        f1=report.overall.f1,
        precision=report.overall.precision,
        recall=report.overall.recall,
    )
    return report


# --- ablation summaries ---
def ablation_table(runs: dict[str, Sequence[Sequence[float | None]]], bin_labels: Sequence[str]) -> list[dict[str, Any]]:
    """Mean and std across runs of the per-wind-bin F1, plus the bin-averaged F1.

    ``runs`` maps a configuration name to one list of per-bin F1 values per run.
    """
    rows = []
    for name, per_run in runs.items():
        arr = np.array([[np.nan if v is None else v for v in run] for run in per_run], dtype=np.float64)
        row: dict[str, Any] = {"configuration": name, "runs": len(per_run)}
        for j, label in enumerate(bin_labels):
            col = arr[:, j][np.isfinite(arr[:, j])]
            row[f"f1_{label}_mean"] = float(col.mean()) if col.size else None
            row[f"f1_{label}_std"] = float(col.std()) if col.size else None
        avg = np.array([np.nanmean(r) if np.isfinite(r).any() else np.nan for r in arr])
        avg = avg[np.isfinite(avg)]
        row["f1_average_mean"] = float(avg.mean()) if avg.size else None
        row["f1_average_std"] = float(avg.std()) if avg.size else None
        rows.append(row)
    return rows


# --- report files ---
def _write_csv(path: Path, rows: list[dict[str, Any]]) -> None:
    if not rows:
        path.write_text("", encoding="utf-8")
        return
    fields = list(rows[0])
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


def _group_rows(groups: Sequence[GroupMetrics]) -> list[dict[str, Any]]:
    rows = []
    for g in groups:
        ci = g.f1_ci or ConfidenceInterval()
        rows.append({
            "group": g.group, "key": g.key, "n_patches": g.n_patches,
            "precision": g.prf.precision, "recall": g.prf.recall, "f1": g.prf.f1,
            "f1_lo": ci.lo, "f1_hi": ci.hi, "f1_std": ci.std,
            "tp": g.prf.tp, "fp": g.prf.fp, "fn": g.prf.fn, "tn": g.prf.tn,
            "rain_fraction_true": g.rain_fraction_true, "rain_fraction_pred": g.rain_fraction_pred,
            "mean_rain_true": g.mean_rain_true, "mean_rain_pred": g.mean_rain_pred,
            "diagnostic": g.diagnostic,
        })
    return rows


def write_report(report: MetricsReport, out_dir: str | Path, ablation: list[dict[str, Any]] | None = None) -> Path:
    """report.json plus one CSV table per analysis."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.model_dump_json(indent=1), encoding="utf-8")
    _write_csv(out_dir / "wind_bins.csv", _group_rows(report.wind_bins))
    _write_csv(out_dir / "stations.csv", _group_rows(report.stations))
    _write_csv(out_dir / "processing_versions.csv", _group_rows(report.processing_versions))
    _write_csv(out_dir / "regions.csv", _group_rows(report.regions))
    _write_csv(
        out_dir / "threshold_sweep.csv",
        [
            {"wind_bin": r.wind_bin, "threshold": r.threshold, "precision": r.prf.precision,
             "recall": r.prf.recall, "f1": r.prf.f1,
             "best": report.best_thresholds.get(r.wind_bin) == r.threshold}
            for r in report.threshold_sweep
        ],
    )
    h = report.rate_histogram
    if h:
        _write_csv(
            out_dir / "rate_histogram.csv",
            [{"lo": lo, "hi": hi, "truth": t, "pred": p}
             for lo, hi, t, p in zip(h["edges"][:-1], h["edges"][1:], h["truth"], h["pred"])],
        )
    if ablation:
        _write_csv(out_dir / "ablation.csv", ablation)
        (out_dir / "ablation.json").write_text(json.dumps(ablation, indent=1), encoding="utf-8")
    return out_dir / "report.json"
