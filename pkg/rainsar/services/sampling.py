"""Class-balanced sampling with replacement over the 10 wind/rain classes."""

from collections.abc import Sequence

import numpy as np
import structlog

from rainsar.errors import EmptyClass
from rainsar.models import N_CLASSES, N_WIND_CLASSES, PatchRecord

log = structlog.get_logger(__name__)


def _merge_target(class_id: int, pools: list[list[PatchRecord]]) -> int | None:
    """Nearest wind class with the same rain flag that has records (lower side first)."""
    rain = class_id // N_WIND_CLASSES
    wind = class_id % N_WIND_CLASSES
    for step in range(1, N_WIND_CLASSES):
        for w in (wind - step, wind + step):
            if 0 <= w < N_WIND_CLASSES and pools[rain * N_WIND_CLASSES + w]:
                return rain * N_WIND_CLASSES + w
    return None


def class_pools(
    records: Sequence[PatchRecord],
    class_count: int = N_CLASSES,
    merge_empty: bool = False,
) -> list[list[PatchRecord]]:
    """Records grouped by class_id.

    With ``merge_empty`` an empty class borrows the pool of its nearest wind
    class of the same rain flag; otherwise an empty class raises EmptyClass.
    """
    pools: list[list[PatchRecord]] = [[] for _ in range(class_count)]
    for r in records:
        pools[r.class_id].append(r)
    source = [list(p) for p in pools]
    for c in range(class_count):
        if pools[c]:
            continue
        target = _merge_target(c, source) if merge_empty else None
        if target is None:
            raise EmptyClass(c)
        pools[c] = source[target]
        log.warning("empty_class_merged", class_id=c, merged_with=target, records=len(source[target]))
    return pools


def balanced_sample(
    pools: Sequence[Sequence[PatchRecord]] | Sequence[PatchRecord],
    class_count: int = N_CLASSES,
    per_class: int = 2,
    rng: np.random.Generator | None = None,
) -> list[PatchRecord]:
    """``per_class`` uniform draws with replacement from every class, class by class."""
    rng = rng or np.random.default_rng()
    if pools and isinstance(pools[0], PatchRecord):
        pools = class_pools(pools, class_count)
    if len(pools) != class_count:
        raise ValueError(f"expected {class_count} class pools, got {len(pools)}")
    batch: list[PatchRecord] = []
    for c, pool in enumerate(pools):
        if not pool:
            raise EmptyClass(c)
        for i in rng.integers(len(pool), size=per_class):
            batch.append(pool[int(i)])
    return batch
