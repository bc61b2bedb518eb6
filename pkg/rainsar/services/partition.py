"""IW-atomic train/val/test partitioning that matches class distributions.

Objective of an assignment (lower is better):

    sum_s L1(p_s - p_global) + fraction_weight * sum_s |n_s / N - f_s|

with p_s the 10-class distribution of subset s, n_s its patch count and f_s
its target fraction. Small problems are solved exhaustively; larger ones by
seeded hill-climbing (single-IW moves and swaps) started from the best of a
batch of random splits.
"""

import itertools
from collections.abc import Sequence

import numpy as np
import structlog

from rainsar.errors import InsufficientGroups
from rainsar.models import N_CLASSES, SUBSETS, PatchRecord

log = structlog.get_logger(__name__)


def iw_class_counts(records: Sequence[PatchRecord]) -> tuple[list[str], np.ndarray]:
    """Sorted IW ids and their per-class patch counts [n_iw, N_CLASSES]."""
    iws = sorted({r.iw_id for r in records})
    index = {iw: i for i, iw in enumerate(iws)}
    counts = np.zeros((len(iws), N_CLASSES), dtype=np.float64)
    for r in records:
        counts[index[r.iw_id], r.class_id] += 1
    return iws, counts


def split_objective(
    assign: np.ndarray,
    counts: np.ndarray,
    fractions: Sequence[float],
    fraction_weight: float = 2.0,
) -> float:
    k = len(fractions)
    subset_counts = np.zeros((k, counts.shape[1]))
    np.add.at(subset_counts, assign, counts)
    n_s = subset_counts.sum(axis=1)
    total = n_s.sum()
    if total == 0:
        return 0.0
    p_global = counts.sum(axis=0) / total
    l1 = 0.0
    for s in range(k):
        if n_s[s] > 0:
            l1 += float(np.abs(subset_counts[s] / n_s[s] - p_global).sum())
        elif fractions[s] > 0:
            l1 += 1.0
    penalty = float(np.abs(n_s / total - np.asarray(fractions)).sum())
    return l1 + fraction_weight * penalty


def _exhaustive(counts: np.ndarray, fractions: Sequence[float], weight: float) -> tuple[np.ndarray, float]:
    best, best_obj = None, np.inf
    for combo in itertools.product(range(len(fractions)), repeat=counts.shape[0]):
        assign = np.asarray(combo)
        obj = split_objective(assign, counts, fractions, weight)
        if obj < best_obj:
            best, best_obj = assign, obj
    return best, best_obj


def _hill_climb(
    start: np.ndarray,
    counts: np.ndarray,
    fractions: Sequence[float],
    weight: float,
    iterations: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float]:
    k = len(fractions)
    cur = start.copy()
    cur_obj = split_objective(cur, counts, fractions, weight)
    n = len(cur)
    for _ in range(iterations):
        cand = cur.copy()
        if rng.random() < 0.5:
            i = rng.integers(n)
            cand[i] = (cand[i] + rng.integers(1, k)) % k
        else:
            i, j = rng.choice(n, size=2, replace=False)
            if cand[i] == cand[j]:
                continue
            cand[i], cand[j] = cand[j], cand[i]
        obj = split_objective(cand, counts, fractions, weight)
        if obj <= cur_obj:
            cur, cur_obj = cand, obj
    return cur, cur_obj


def partition(
    records: Sequence[PatchRecord],
    fractions: Sequence[float] = (0.7, 0.1, 0.2),
    iterations: int = 2000,
    seed: int = 0,
    restarts: int = 4,
    random_baseline: int = 100,
    fraction_weight: float = 2.0,
    exhaustive_limit: int = 6561,
) -> dict[str, str]:
    """Map every IW id to ``train``/``val``/``test``; all patches of an IW share a subset."""
    iws, counts = iw_class_counts(records)
    if len(iws) < 3:
        raise InsufficientGroups(f"Partition needs at least 3 distinct IWs, got {len(iws)}")
    k = len(fractions)
    rng = np.random.default_rng(seed)

    if k ** len(iws) <= exhaustive_limit:
        best, best_obj = _exhaustive(counts, fractions, fraction_weight)
        method = "exhaustive"
    else:
        p = np.asarray(fractions, dtype=np.float64) / np.sum(fractions)
        best, best_obj = None, np.inf
        for _ in range(max(1, random_baseline)):
            assign = rng.choice(k, size=len(iws), p=p)
            obj = split_objective(assign, counts, fractions, fraction_weight)
            if obj < best_obj:
                best, best_obj = assign, obj
        baseline_obj = best_obj
        for r in range(max(1, restarts)):
            start = best if r == 0 else rng.choice(k, size=len(iws), p=p)
            cand, obj = _hill_climb(start, counts, fractions, fraction_weight, iterations, rng)
            if obj < best_obj:
                best, best_obj = cand, obj
        method = "hill_climb"
        log.debug("partition_baseline", objective=baseline_obj)

    log.info("partition_completed", method=method, iws=len(iws), objective=best_obj)
    return {iw: SUBSETS[int(s)] for iw, s in zip(iws, best)}
