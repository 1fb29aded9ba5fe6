"""Outlier detector boundary: external index loading plus a built-in baseline.

The baseline is a per-KPI robust z-score against the reference table's
median/MAD with "any KPI exceeds" aggregation. It exists so the pipeline runs
end to end; any real detector can replace it through the index file or the
service's outlier endpoint.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .model import fmt_ts, parse_ts
from .references import ReferenceTable

MAD_EPSILON = 1e-9  # zero-MAD guard; flat series flag any deviation


class OutlierIndexError(Exception):
    """Outlier index file failed to parse or references unknown rows."""


@dataclass(frozen=True)
class OutlierIndex:
    """Set of (cell_id, timestamp) rows some detector flagged as outliers."""

    entries: frozenset[tuple[str, datetime]]
    source: str
    threshold_used: float = float("nan")
    skipped_missing_context: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, item: tuple[str, datetime]) -> bool:
        return item in self.entries

    def validate_against(self, dataset: Dataset) -> None:
        """Raise if any entry does not resolve to a dataset row."""
        known = {(dataset.cell_ids[i], dataset.timestamps[i]) for i in range(len(dataset))}
        dangling = sorted(
            f"{cell}@{fmt_ts(ts)}" for (cell, ts) in self.entries if (cell, ts) not in known
        )
        if dangling:
            raise OutlierIndexError(
                f"{len(dangling)} index entries reference no dataset row, "
                f"first few: {dangling[:5]}"
            )


def load_outlier_index(path: str | Path, source: str | None = None) -> OutlierIndex:
    """Load a `cell_id,timestamp` CSV of outlier flags. Duplicates collapse."""
    path = Path(path)
    entries: set[tuple[str, datetime]] = set()
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise OutlierIndexError(f"{path}: empty file") from None
        if [h.strip() for h in header[:2]] != ["cell_id", "timestamp"]:
            raise OutlierIndexError(f"{path} line 1: header must be cell_id,timestamp")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise OutlierIndexError(f"{path} line {lineno}: expected 2 columns")
            try:
                entries.add((row[0], parse_ts(row[1])))
            except ValueError as exc:
                raise OutlierIndexError(f"{path} line {lineno}: {exc}") from None
    return OutlierIndex(entries=frozenset(entries), source=source or str(path))


def baseline_detect(dataset: Dataset, table: ReferenceTable, z: float) -> OutlierIndex:
    """Flag a record iff any KPI's |x - median| / (MAD + eps) exceeds z.

    Median/MAD come from the record's context in ``table``. Records whose
    context has no entry are skipped and counted.
    """
    if z <= 0:
        raise ValueError("z must be positive")

    names = dataset.schema.names
    entries: set[tuple[str, datetime]] = set()
    skipped = 0
    # Per-cell stat vectors; regions resolved through the cell's rows.
    stats_cache: dict[str, tuple[np.ndarray, np.ndarray] | None] = {}

    def stats_for(cell: str) -> tuple[np.ndarray, np.ndarray] | None:
        if cell in stats_cache:
            return stats_cache[cell]
        med = np.empty(len(names))
        mad = np.empty(len(names))
        result: tuple[np.ndarray, np.ndarray] | None = (med, mad)
        for j, kpi in enumerate(names):
            entry = table.lookup(kpi, cell_id=cell, region_id=dataset.region_of(cell))
            if entry is None:
                result = None
                break
            med[j], mad[j] = entry.median, entry.mad
        stats_cache[cell] = result
        return result

    for cell, rows in dataset.rows_by_cell().items():
        stats = stats_for(cell)
        if stats is None:
            skipped += len(rows)
            continue
        med, mad = stats
        block = dataset.values[rows]
        scores = np.abs(block - med) / (mad + MAD_EPSILON)
        scores = np.where(np.isnan(block), 0.0, scores)  # missing values never flag
        hit = (scores > z).any(axis=1)
        for k in np.nonzero(hit)[0]:
            i = rows[int(k)]
            entries.add((dataset.cell_ids[i], dataset.timestamps[i]))

    return OutlierIndex(
        entries=frozenset(entries),
        source="baseline",
        threshold_used=z,
        skipped_missing_context=skipped,
    )
