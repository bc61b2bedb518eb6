"""Tests for IW-atomic dataset partitioning."""

import itertools
from collections import Counter

import numpy as np
import pytest

from rainsar.errors import InsufficientGroups
from rainsar.models import SUBSETS, DatasetManifest
from rainsar.services.partition import iw_class_counts, partition, split_objective
from tests.conftest import make_record

FRACTIONS = (0.7, 0.1, 0.2)


def random_records(n_iws, seed=0, low=5, high=15):
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_iws):
        for j in range(int(rng.integers(low, high))):
            records.append(make_record(f"IW{i:03d}", class_id=int(rng.integers(0, 10)), row=j))
    return records


def objective_of(split, records):
    iws, counts = iw_class_counts(records)
    assign = np.array([SUBSETS.index(split[iw]) for iw in iws])
    return split_objective(assign, counts, FRACTIONS)


def test_large_partition_meets_fractions():
    records = random_records(200)
    split = partition(records, FRACTIONS, seed=1)
    assert set(split.values()) == set(SUBSETS)
    total = len(records)
    for subset, target in zip(SUBSETS, FRACTIONS):
        n = sum(1 for r in records if split[r.iw_id] == subset)
        assert abs(n / total - target) <= 0.03


def test_large_partition_beats_random_splits():
    records = random_records(200, seed=3)
    iws, counts = iw_class_counts(records)
    rng = np.random.default_rng(5)
    baseline = min(
        split_objective(rng.choice(3, size=len(iws), p=np.asarray(FRACTIONS)), counts, FRACTIONS) for _ in range(100)
    )
    split = partition(records, FRACTIONS, seed=5)
    assert objective_of(split, records) <= baseline


def brute_force_objective(split, records):
    """Class-distribution L1 plus twice the fraction miss, computed from the records directly."""
    total = len(records)
    overall = Counter(r.class_id for r in records)
    value = 0.0
    for subset, target in zip(SUBSETS, FRACTIONS):
        members = Counter(r.class_id for r in records if split[r.iw_id] == subset)
        n = sum(members.values())
        if n == 0:
            value += 1.0
        else:
            value += sum(abs(members[c] / n - overall[c] / total) for c in range(10))
        value += 2.0 * abs(n / total - target)
    return value


def test_small_partition_is_brute_force_optimum():
    records = random_records(6, seed=2)
    iws = sorted({r.iw_id for r in records})
    best = min(
        brute_force_objective(dict(zip(iws, combo)), records) for combo in itertools.product(SUBSETS, repeat=len(iws))
    )
    split = partition(records, FRACTIONS, seed=0)
    assert brute_force_objective(split, records) == pytest.approx(best, abs=1e-12)


def test_identical_histograms_split_seven_one_two():
    records = [make_record(f"IW{i}", class_id=c, row=j) for i in range(10) for j, c in enumerate((0, 0, 3, 5, 8))]
    split = partition(records, FRACTIONS, seed=0)
    sizes = Counter(split.values())
    assert (sizes["train"], sizes["val"], sizes["test"]) == (7, 1, 2)
    assert objective_of(split, records) == pytest.approx(0.0, abs=1e-12)
    # every subset has the global class distribution, so only the fraction term is left
    uneven = {f"IW{i}": s for i, s in enumerate(["train"] * 5 + ["val"] * 3 + ["test"] * 2)}
    assert objective_of(uneven, records) == pytest.approx(2.0 * (0.2 + 0.2), abs=1e-12)


def test_partition_is_leak_free_and_deterministic():
    records = random_records(30, seed=4)
    split = partition(records, FRACTIONS, seed=9)
    assert split == partition(records, FRACTIONS, seed=9)
    manifest = DatasetManifest(records=records, split=split)
    assert manifest.is_leak_free()
    assert sum(len(manifest.subset(s)) for s in SUBSETS) == len(records)


def test_partition_needs_three_iws():
    records = [make_record("IW0"), make_record("IW1", row=1), make_record("IW1", row=2)]
    with pytest.raises(InsufficientGroups):
        partition(records)
