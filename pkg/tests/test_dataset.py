"""CSV dataset ingestion and validation."""

from __future__ import annotations

import math
from datetime import timedelta

import pytest

from rulemine.dataset import Dataset, DatasetError

from conftest import T0, dataset_from_rows, linear_schema, ts

CSV_TEXT = """timestamp,region_id,cell_id,kpi1,kpi2
2025-01-01T00:00:00Z,r1,cellA,1.5,2.5
2025-01-01T00:15:00Z,r1,cellA,,3.5
2025-01-01T00:00:00Z,r1,cellB,9.0,8.0
"""


def test_from_csv_parses_rows_and_missing_values(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text(CSV_TEXT)
    ds = Dataset.from_csv(path)
    assert len(ds) == 3
    assert ds.schema.names == ("kpi1", "kpi2")
    assert ds.cell_ids == ["cellA", "cellA", "cellB"]
    rec = ds.record(1)
    assert math.isnan(rec.values[0])
    assert rec.values[1] == 3.5
    assert rec.timestamp == ts(15)


def test_round_trip_preserves_bytes(tmp_path):
    src = tmp_path / "a.csv"
    src.write_text(CSV_TEXT)
    ds = Dataset.from_csv(src)
    dst = tmp_path / "b.csv"
    ds.to_csv(dst)
    again = Dataset.from_csv(dst)
    assert again.cell_ids == ds.cell_ids
    assert again.timestamps == ds.timestamps
    assert str(again.values) == str(ds.values)  # NaN-tolerant comparison
    dst2 = tmp_path / "c.csv"
    again.to_csv(dst2)
    assert dst.read_bytes() == dst2.read_bytes()


def test_schema_mismatch_rejected(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text(CSV_TEXT)
    with pytest.raises(DatasetError, match="do not match schema"):
        Dataset.from_csv(path, schema=linear_schema(3))


def test_malformed_value_reports_row_number(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text(CSV_TEXT.replace("9.0", "wat"))
    with pytest.raises(DatasetError, match="row 4"):
        Dataset.from_csv(path)


def test_bad_timestamp_reports_row_number(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text(CSV_TEXT.replace("2025-01-01T00:15:00Z", "yesterday"))
    with pytest.raises(DatasetError, match="row 3"):
        Dataset.from_csv(path)


def test_wrong_header_rejected(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("when,where,cell,kpi1\n2025-01-01T00:00:00Z,r,c,1\n")
    with pytest.raises(DatasetError, match="header"):
        Dataset.from_csv(path)


def test_interval_alignment_enforced_when_given(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text(CSV_TEXT.replace("00:15:00", "00:07:00"))
    with pytest.raises(DatasetError, match="not aligned"):
        Dataset.from_csv(path, interval=timedelta(minutes=15))
    # Aligned data passes.
    ok = tmp_path / "ok.csv"
    ok.write_text(CSV_TEXT)
    assert len(Dataset.from_csv(ok, interval=timedelta(minutes=15))) == 3


def test_window_mask_is_half_open():
    ds = dataset_from_rows(linear_schema(1), [(0, "a", "r", [1.0]), (15, "a", "r", [2.0])])
    mask = ds.window_mask(T0, ts(15))
    assert list(mask) == [True, False]
