"""Per-context reference statistics: the norm each observed value is compared against.

A context is (kpi[, cell | region]) over a time window. Windows are half-open
[start, end). Tables are immutable snapshots; the pipeline swaps in a fresh one
at refresh time (single writer, many readers).
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from datetime import datetime, timedelta
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .dataset import Dataset
from .model import ContextLevel, context_key, fmt_ts, parse_ts


class EmptyWindowError(Exception):
    """No records fall inside the requested window."""


class Measure(Enum):
    """Closed set of norm definitions; composite measures would slot in here
    plus one branch in compute_measure."""

    MEAN = "mean"
    MEDIAN = "median"
    MODE = "mode"
    MEAN_ABOVE_MEDIAN = "mean_above_median"
    MEAN_PLUS_STD = "mean_plus_std"


@dataclass(frozen=True)
class MeasureSpec:
    """Which statistical measure defines the norm of a context."""

    kind: Measure = Measure.MEDIAN
    mode_digits: int = 3  # significant digits used to bucket reals for the mode

    def __post_init__(self) -> None:
        if self.mode_digits < 1:
            raise ValueError("mode_digits must be >= 1")


@dataclass(frozen=True)
class DriftConfig:
    """Rolling-window refresh policy that absorbs concept drift."""

    window_length: timedelta = timedelta(days=30)
    update_period: timedelta = timedelta(days=1)
    exclude_outliers: bool = True

    def __post_init__(self) -> None:
        if self.update_period <= timedelta(0):
            raise ValueError("update_period must be positive")
        if self.window_length < self.update_period:
            raise ValueError("window_length must be >= update_period")


@dataclass(frozen=True)
class RefEntry:
    """Reference statistic for one context, plus robust stats for the baseline detector."""

    ref: float
    sample_count: int
    median: float
    mad: float

    def __post_init__(self) -> None:
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")


@dataclass(frozen=True)
class ReferenceTable:
    """Snapshot of per-context reference statistics over one window."""

    level: ContextLevel
    window: tuple[datetime, datetime]
    computed_at: datetime
    measure: MeasureSpec
    entries: Mapping[tuple[str, ...], RefEntry]
    gaps: tuple[tuple[str, ...], ...] = ()  # contexts with zero usable samples; diagnostics only

    def lookup(self, kpi: str, cell_id: str | None = None, region_id: str | None = None) -> RefEntry | None:
        return self.entries.get(context_key(self.level, kpi, cell_id, region_id))

    def to_json(self) -> dict:
        entries = []
        for key in sorted(self.entries):
            e = self.entries[key]
            item: dict = {"kpi": key[0]}
            if self.level is ContextLevel.CELL_KPI:
                item["cell"] = key[1]
            elif self.level is ContextLevel.REGION_KPI:
                item["region"] = key[1]
            item.update(ref=e.ref, sample_count=e.sample_count, median=e.median, mad=e.mad)
            entries.append(item)
        return {
            "level": self.level.value,
            "window": {"start": fmt_ts(self.window[0]), "end": fmt_ts(self.window[1])},
            "computed_at": fmt_ts(self.computed_at),
            "measure": self.measure.kind.value,
            "entries": entries,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"

    @classmethod
    def from_json(cls, data: Mapping) -> "ReferenceTable":
        level = ContextLevel(data["level"])
        entries: dict[tuple[str, ...], RefEntry] = {}
        for item in data.get("entries", ()):
            key = context_key(level, item["kpi"], item.get("cell"), item.get("region"))
            entries[key] = RefEntry(
                ref=float(item["ref"]),
                sample_count=int(item["sample_count"]),
                median=float(item["median"]),
                mad=float(item["mad"]),
            )
        return cls(
            level=level,
            window=(parse_ts(data["window"]["start"]), parse_ts(data["window"]["end"])),
            computed_at=parse_ts(data["computed_at"]),
            measure=MeasureSpec(kind=Measure(data.get("measure", "median"))),
            entries=entries,
        )

    @classmethod
    def loads(cls, text: str) -> "ReferenceTable":
        return cls.from_json(json.loads(text))


# ---------------------------------------------------------------------------
# Measures
# ---------------------------------------------------------------------------


def _round_sig(x: float, digits: int) -> float:
    if x == 0 or not math.isfinite(x):
        return x
    return round(x, digits - 1 - math.floor(math.log10(abs(x))))


def compute_measure(values: Sequence[float], spec: MeasureSpec) -> float:
    """Apply the configured statistical measure to a non-empty value list.

    Input is sorted first so the result is bitwise permutation-invariant
    (float summation is order-sensitive in the last ulp otherwise).
    """
    arr = np.sort(np.asarray(values, dtype=np.float64))
    if arr.size == 0:
        raise ValueError("compute_measure needs a non-empty value list")
    kind = spec.kind
    if kind is Measure.MEAN:
        return float(np.mean(arr))
    if kind is Measure.MEDIAN:
        return float(np.median(arr))
    if kind is Measure.MODE:
        rounded = [_round_sig(float(v), spec.mode_digits) for v in arr]
        counts = Counter(rounded)
        best = max(counts.items(), key=lambda kv: (kv[1], -kv[0]))  # ties -> smallest value
        return float(best[0])
    if kind is Measure.MEAN_ABOVE_MEDIAN:
        med = float(np.median(arr))
        above = arr[arr > med]
        if above.size == 0:  # constant-ish list: nothing strictly above the median
            return med
        return float(np.mean(above))
    if kind is Measure.MEAN_PLUS_STD:
        return float(np.mean(arr) + np.std(arr))  # population std
    raise ValueError(f"unknown measure kind: {kind}")


# ---------------------------------------------------------------------------
# Context partitioning and table construction
# ---------------------------------------------------------------------------


def _key_columns(dataset: Dataset, level: ContextLevel) -> list[str] | None:
    if level is ContextLevel.KPI:
        return None
    if level is ContextLevel.CELL_KPI:
        return dataset.cell_ids
    return dataset.region_ids


def partition_contexts(
    dataset: Dataset,
    level: ContextLevel,
    window: tuple[datetime, datetime],
    exclude_rows: np.ndarray | None = None,
) -> dict[tuple[str, ...], np.ndarray]:
    """Bucket every in-window value by its context key at the given level.

    ``exclude_rows`` is an optional boolean mask of rows to drop (outliers).
    Missing values never enter a bucket.
    """
    mask = dataset.window_mask(*window)
    if not mask.any():
        raise EmptyWindowError(
            f"no records in window [{fmt_ts(window[0])}, {fmt_ts(window[1])})"
        )
    if exclude_rows is not None:
        mask = mask & ~exclude_rows

    rows = np.nonzero(mask)[0]
    entity = _key_columns(dataset, level)
    buckets: dict[tuple[str, ...], np.ndarray] = {}
    names = dataset.schema.names

    if entity is None:
        for j, kpi in enumerate(names):
            col = dataset.values[rows, j]
            buckets[(kpi,)] = col[~np.isnan(col)]
        return buckets

    groups: dict[str, list[int]] = {}
    for i in rows:
        groups.setdefault(entity[i], []).append(int(i))
    for ent, idx in groups.items():
        block = dataset.values[idx]
        for j, kpi in enumerate(names):
            col = block[:, j]
            buckets[(kpi, ent)] = col[~np.isnan(col)]
    return buckets


def compute_reference_table(
    dataset: Dataset,
    outlier_index: set[tuple[str, datetime]] | None,
    level: ContextLevel,
    window: tuple[datetime, datetime],
    spec: MeasureSpec,
    exclude_outliers: bool = True,
    computed_at: datetime | None = None,
) -> ReferenceTable:
    """Build the reference table from in-window, non-outlier values.

    Contexts left without a single usable sample are omitted and listed in
    ``table.gaps``.
    """
    exclude = None
    if exclude_outliers and outlier_index:
        flagged = [
            (dataset.cell_ids[i], dataset.timestamps[i]) in outlier_index
            for i in range(len(dataset))
        ]
        exclude = np.array(flagged, dtype=bool)

    buckets = partition_contexts(dataset, level, window, exclude_rows=exclude)

    # A context "present in the window" but left without usable samples after
    # exclusion (or with only missing values) is a gap, not an entry.
    names = dataset.schema.names
    raw_rows = np.nonzero(dataset.window_mask(*window))[0]
    entity = _key_columns(dataset, level)
    if entity is None:
        all_keys = {(kpi,) for kpi in names}
    else:
        present = {entity[i] for i in raw_rows}
        all_keys = {(kpi, ent) for kpi in names for ent in present}

    entries: dict[tuple[str, ...], RefEntry] = {}
    for key, vals in buckets.items():
        if vals.size == 0:
            continue
        entries[key] = RefEntry(
            ref=compute_measure(vals, spec),
            sample_count=int(vals.size),
            median=float(np.median(vals)),
            mad=float(np.median(np.abs(vals - np.median(vals)))),
        )
    gaps = [key for key in all_keys if key not in entries]
    return ReferenceTable(
        level=level,
        window=window,
        computed_at=computed_at if computed_at is not None else window[1],
        measure=spec,
        entries=entries,
        gaps=tuple(sorted(gaps)),
    )


def update_references(
    table: ReferenceTable,
    dataset: Dataset,
    now: datetime,
    drift: DriftConfig,
    outlier_index: set[tuple[str, datetime]] | None = None,
) -> ReferenceTable:
    """Rolling-window refresh: recompute over [now - window_length, now) once
    the update period has elapsed, otherwise return the table unchanged.

    Fresh outlier labels usually lag in the application phase, so exclusion
    only applies when the caller supplies an index.
    """
    if now < table.computed_at:
        raise ValueError("now precedes the table's computed_at")
    if now - table.computed_at < drift.update_period:
        return table
    window = (now - drift.window_length, now)
    return compute_reference_table(
        dataset,
        outlier_index,
        table.level,
        window,
        table.measure,
        exclude_outliers=drift.exclude_outliers and outlier_index is not None,
        computed_at=now,
    )
