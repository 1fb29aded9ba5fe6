"""Group consecutive outlier records into single anomalous occurrences.

Records whose inter-record gap does not exceed the configured minimum interval
(inclusive) belong to one occurrence. Batch mode condenses a finished list;
stream mode keeps per-cell running state and emits per the notification mode:

* delayed - one occurrence, emitted once the gap has elapsed past its last
  record (an external clock tick closes groups; the collator owns no timer),
* eager - a superseding snapshot of the growing occurrence per ingested record.

Group boundaries depend only on timestamps, never on field values. Stream and
batch grouping coincide exactly when ticks follow event time (now never runs
ahead of record timestamps); a wall clock racing past late-arriving records
closes groups earlier, which is the intended behavior for live feeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum

from .model import Agg, CollatedOutlier, FieldSchema, KpiRecord, fmt_ts


class CollationOrderError(Exception):
    """Input records are not time-ordered within a cell."""


class CollationMode(Enum):
    DELAYED = "delayed"
    EAGER = "eager"


@dataclass(frozen=True)
class CollationConfig:
    min_interval: timedelta = timedelta(minutes=15)
    mode: CollationMode = CollationMode.DELAYED

    def __post_init__(self) -> None:
        if self.min_interval <= timedelta(0):
            raise ValueError("min_interval must be positive")


class _FieldAgg:
    """Running aggregate for one field; NaN inputs are ignored."""

    __slots__ = ("agg", "acc", "n")

    def __init__(self, agg: Agg):
        self.agg = agg
        self.acc = 0.0 if agg is Agg.MEAN else math.nan
        self.n = 0

    def add(self, value: float) -> None:
        if math.isnan(value):
            return
        if self.agg is Agg.MEAN:
            self.acc += value
        elif self.agg is Agg.MAX:
            self.acc = value if self.n == 0 else max(self.acc, value)
        else:
            self.acc = value if self.n == 0 else min(self.acc, value)
        self.n += 1

    def value(self) -> float:
        if self.n == 0:
            return math.nan
        return self.acc / self.n if self.agg is Agg.MEAN else self.acc


@dataclass
class _OpenGroup:
    t_start: datetime
    last_t: datetime
    cell_id: str
    region_id: str
    aggs: list[_FieldAgg]
    duration: int = 0

    @property
    def group_id(self) -> str:
        return f"{self.cell_id}@{fmt_ts(self.t_start)}"  # equals the snapshot's group_id

    def add(self, record: KpiRecord) -> None:
        for agg, value in zip(self.aggs, record.values):
            agg.add(value)
        self.last_t = record.timestamp
        self.duration += 1

    def snapshot(self) -> CollatedOutlier:
        return CollatedOutlier(
            t_start=self.t_start,
            t_end=self.last_t,
            aggregated=tuple(a.value() for a in self.aggs),
            duration=self.duration,
            cell_id=self.cell_id,
            region_id=self.region_id,
        )


def _new_group(record: KpiRecord, schema: FieldSchema) -> _OpenGroup:
    group = _OpenGroup(
        t_start=record.timestamp,
        last_t=record.timestamp,
        cell_id=record.cell_id,
        region_id=record.region_id,
        aggs=[_FieldAgg(f.agg) for f in schema],
    )
    group.add(record)
    return group


@dataclass
class CollatorState:
    """At most one open group per cell. Owned by a single consumer per cell."""

    open_groups: dict[str, _OpenGroup] = field(default_factory=dict)
    last_seen: dict[str, datetime] = field(default_factory=dict)

    def has_open(self, cell_id: str) -> bool:
        return cell_id in self.open_groups


def collate_batch(
    outlier_records: list[KpiRecord],
    schema: FieldSchema,
    cfg: CollationConfig,
) -> list[CollatedOutlier]:
    """Condense time-ordered flagged records into occurrences, per cell.

    Raises on out-of-order input within a cell; no silent sorting.
    """
    per_cell: dict[str, list[KpiRecord]] = {}
    last_seen: dict[str, datetime] = {}
    for rec in outlier_records:
        prev = last_seen.get(rec.cell_id)
        if prev is not None and rec.timestamp < prev:
            raise CollationOrderError(
                f"cell {rec.cell_id}: record at {fmt_ts(rec.timestamp)} "
                f"precedes {fmt_ts(prev)}"
            )
        last_seen[rec.cell_id] = rec.timestamp
        per_cell.setdefault(rec.cell_id, []).append(rec)

    groups: list[CollatedOutlier] = []
    for records in per_cell.values():
        current: _OpenGroup | None = None
        for rec in records:
            if current is not None and rec.timestamp - current.last_t <= cfg.min_interval:
                current.add(rec)
            else:
                if current is not None:
                    groups.append(current.snapshot())
                current = _new_group(rec, schema)
        if current is not None:
            groups.append(current.snapshot())
    groups.sort(key=lambda g: (g.t_start, g.cell_id))
    return groups


def collate_stream(
    state: CollatorState,
    record: KpiRecord,
    now: datetime,
    schema: FieldSchema,
    cfg: CollationConfig,
) -> tuple[CollatorState, list[CollatedOutlier]]:
    """Ingest one flagged record; returns the new state and any emissions.

    The passed ``now`` also acts as a clock tick for the record's cell.
    """
    emitted: list[CollatedOutlier] = []
    open_groups = dict(state.open_groups)
    last_seen = dict(state.last_seen)
    current = open_groups.get(record.cell_id)

    prev_t = last_seen.get(record.cell_id)
    if prev_t is not None and record.timestamp < prev_t:
        raise CollationOrderError(
            f"cell {record.cell_id}: record at {fmt_ts(record.timestamp)} "
            f"precedes previously seen {fmt_ts(prev_t)}"
        )
    last_seen[record.cell_id] = record.timestamp

    if current is not None and record.timestamp - current.last_t <= cfg.min_interval:
        current.add(record)
    else:
        if current is not None and cfg.mode is CollationMode.DELAYED:
            emitted.append(current.snapshot())
        open_groups[record.cell_id] = current = _new_group(record, schema)

    if cfg.mode is CollationMode.EAGER:
        emitted.append(current.snapshot())

    new_state = CollatorState(open_groups=open_groups, last_seen=last_seen)
    if cfg.mode is CollationMode.DELAYED:
        new_state, late = collate_flush(new_state, now, cfg, cells=[record.cell_id])
        emitted.extend(late)
    return new_state, emitted


def collate_flush(
    state: CollatorState,
    now: datetime,
    cfg: CollationConfig,
    cells: list[str] | None = None,
) -> tuple[CollatorState, list[CollatedOutlier]]:
    """Clock tick: close groups whose gap has elapsed before ``now``.

    In eager mode closure emits nothing new (the last snapshot already went
    out); the group is just dropped from the state.
    """
    emitted: list[CollatedOutlier] = []
    open_groups = dict(state.open_groups)
    for cell in list(open_groups) if cells is None else cells:
        group = open_groups.get(cell)
        if group is not None and now - group.last_t > cfg.min_interval:
            if cfg.mode is CollationMode.DELAYED:
                emitted.append(group.snapshot())
            del open_groups[cell]
    return CollatorState(open_groups=open_groups, last_seen=dict(state.last_seen)), emitted


def collate_close_all(
    state: CollatorState, cfg: CollationConfig
) -> tuple[CollatorState, list[CollatedOutlier]]:
    """End of stream: close every open group regardless of elapsed time."""
    emitted = []
    if cfg.mode is CollationMode.DELAYED:
        emitted = [g.snapshot() for g in state.open_groups.values()]
    return CollatorState(last_seen=dict(state.last_seen)), emitted
