"""Columnar KPI dataset with CSV ingestion.

CSV layout: header ``timestamp,region_id,cell_id,<kpi1>,<kpi2>,...``,
ISO-8601 UTC timestamps, empty cell = missing value.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterator

import numpy as np

from .model import FieldSchema, KpiRecord, fmt_ts, parse_ts


class DatasetError(Exception):
    """Malformed dataset input; carries the offending row number when known."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


@dataclass
class Dataset:
    """Timestamped multivariate KPI rows keyed by cell and region.

    Values are stored as one float64 matrix (rows x fields), NaN = missing.
    Rows keep file order; consumers sort or slice as needed.
    """

    schema: FieldSchema
    timestamps: list[datetime]
    cell_ids: list[str]
    region_ids: list[str]
    values: np.ndarray
    interval: timedelta | None = None
    _cell_rows: dict[str, list[int]] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        n = len(self.timestamps)
        if not (len(self.cell_ids) == len(self.region_ids) == n):
            raise DatasetError("column lengths disagree")
        if self.values.shape != (n, len(self.schema)):
            raise DatasetError(
                f"value matrix shape {self.values.shape} does not match "
                f"{n} rows x {len(self.schema)} fields"
            )
        if self.interval is not None:
            for i, ts in enumerate(self.timestamps):
                if (ts - ts.replace(hour=0, minute=0, second=0, microsecond=0)) % self.interval:
                    raise DatasetError(f"timestamp {fmt_ts(ts)} not aligned to base interval", row=i + 2)

    def __len__(self) -> int:
        return len(self.timestamps)

    def record(self, i: int) -> KpiRecord:
        return KpiRecord(
            timestamp=self.timestamps[i],
            cell_id=self.cell_ids[i],
            region_id=self.region_ids[i],
            values=tuple(float(v) for v in self.values[i]),
        )

    def records(self) -> Iterator[KpiRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def rows_by_cell(self) -> dict[str, list[int]]:
        """Row indices per cell, in stored order (cached)."""
        if not self._cell_rows:
            by_cell: dict[str, list[int]] = {}
            for i, cell in enumerate(self.cell_ids):
                by_cell.setdefault(cell, []).append(i)
            self._cell_rows.update(by_cell)
        return self._cell_rows

    def region_of(self, cell_id: str) -> str:
        rows = self.rows_by_cell().get(cell_id)
        if not rows:
            raise DatasetError(f"unknown cell: {cell_id}")
        return self.region_ids[rows[0]]

    def window_mask(self, start: datetime, end: datetime) -> np.ndarray:
        """Boolean row mask for the half-open window [start, end)."""
        ts = np.array(self.timestamps)
        return (ts >= start) & (ts < end)

    @property
    def span(self) -> tuple[datetime, datetime]:
        return min(self.timestamps), max(self.timestamps)

    # -- CSV ------------------------------------------------------------------

    HEADER_FIXED = ("timestamp", "region_id", "cell_id")

    @classmethod
    def from_csv(
        cls,
        path: str | Path,
        schema: FieldSchema | None = None,
        interval: timedelta | None = None,
    ) -> "Dataset":
        """Load a dataset; when ``schema`` is given the KPI columns must match it."""
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DatasetError(f"{path}: empty file") from None
            if tuple(header[:3]) != cls.HEADER_FIXED:
                raise DatasetError(
                    f"{path}: header must start with {','.join(cls.HEADER_FIXED)}", row=1
                )
            kpi_names = tuple(header[3:])
            if not kpi_names:
                raise DatasetError(f"{path}: no KPI columns", row=1)
            if schema is None:
                schema = FieldSchema.from_json([{"name": n} for n in kpi_names])
            elif schema.names != kpi_names:
                raise DatasetError(
                    f"{path}: KPI columns {kpi_names} do not match schema {schema.names}", row=1
                )

            timestamps: list[datetime] = []
            cells: list[str] = []
            regions: list[str] = []
            rows: list[list[float]] = []
            width = len(kpi_names)
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 3 + width:
                    raise DatasetError(f"expected {3 + width} columns, got {len(row)}", row=lineno)
                try:
                    timestamps.append(parse_ts(row[0]))
                except ValueError as exc:
                    raise DatasetError(f"bad timestamp {row[0]!r}: {exc}", row=lineno) from None
                regions.append(row[1])
                cells.append(row[2])
                try:
                    rows.append([float(v) if v != "" else float("nan") for v in row[3:]])
                except ValueError as exc:
                    raise DatasetError(f"bad KPI value: {exc}", row=lineno) from None

        values = np.array(rows, dtype=np.float64) if rows else np.empty((0, width))
        return cls(
            schema=schema,
            timestamps=timestamps,
            cell_ids=cells,
            region_ids=regions,
            values=values,
            interval=interval,
        )

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(list(self.HEADER_FIXED) + list(self.schema.names))
            for i in range(len(self)):
                row = [fmt_ts(self.timestamps[i]), self.region_ids[i], self.cell_ids[i]]
                for v in self.values[i]:
                    row.append("" if np.isnan(v) else repr(float(v)))
                writer.writerow(row)
