"""Shared builders for the test suite."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from rulemine.dataset import Dataset
from rulemine.model import (
    Agg,
    CollatedOutlier,
    ContextLevel,
    FieldSchema,
    FieldSpec,
    KpiRecord,
    Scale,
)
from rulemine.references import MeasureSpec, RefEntry, ReferenceTable

T0 = datetime(2025, 1, 1, tzinfo=timezone.utc)


def ts(minutes: float) -> datetime:
    return T0 + timedelta(minutes=minutes)


def linear_schema(n: int = 3, theta: float = 2.0, agg: Agg = Agg.MEAN) -> FieldSchema:
    return FieldSchema(
        tuple(FieldSpec(name=f"kpi{i + 1}", scale=Scale.LINEAR, agg=agg, theta=theta) for i in range(n))
    )


def record(minutes: float, values, cell: str = "cellA", region: str = "r1") -> KpiRecord:
    return KpiRecord(timestamp=ts(minutes), cell_id=cell, region_id=region, values=tuple(values))


def occurrence(
    values,
    cell: str = "cellA",
    region: str = "r1",
    start_min: float = 0,
    duration: int = 1,
) -> CollatedOutlier:
    end = start_min if duration == 1 else start_min + 15 * (duration - 1)
    return CollatedOutlier(
        t_start=ts(start_min),
        t_end=ts(end),
        aggregated=tuple(values),
        duration=duration,
        cell_id=cell,
        region_id=region,
    )


def table_for(
    schema: FieldSchema,
    refs: dict[tuple[str, ...], float],
    level: ContextLevel = ContextLevel.CELL_KPI,
    mad: float = 1.0,
) -> ReferenceTable:
    entries = {
        key: RefEntry(ref=v, sample_count=10, median=v, mad=mad) for key, v in refs.items()
    }
    return ReferenceTable(
        level=level,
        window=(T0, T0 + timedelta(days=30)),
        computed_at=T0 + timedelta(days=30),
        measure=MeasureSpec(),
        entries=entries,
    )


def dataset_from_rows(schema: FieldSchema, rows) -> Dataset:
    """rows: iterable of (minutes, cell, region, values)."""
    rows = list(rows)
    return Dataset(
        schema=schema,
        timestamps=[ts(m) for m, *_ in rows],
        cell_ids=[c for _, c, *_ in rows],
        region_ids=[r for _, _, r, _ in rows],
        values=np.array([v for *_, v in rows], dtype=np.float64),
    )


@pytest.fixture
def schema3() -> FieldSchema:
    return linear_schema(3)
