"""Outlier index loading and the builtin robust-z baseline."""

from __future__ import annotations

import random

import pytest

from rulemine.detector import OutlierIndexError, baseline_detect, load_outlier_index
from rulemine.model import ContextLevel
from rulemine.references import MeasureSpec, compute_reference_table

from conftest import T0, dataset_from_rows, linear_schema, ts

WINDOW = (T0, ts(60 * 24 * 40))


def write_index(tmp_path, rows, header="cell_id,timestamp"):
    path = tmp_path / "outliers.csv"
    path.write_text("\n".join([header] + rows) + ("\n" if rows or header else ""))
    return path


def test_load_index_basic(tmp_path):
    path = write_index(tmp_path, [
        "cellA,2025-01-01T00:00:00Z",
        "cellA,2025-01-01T00:15:00Z",
        "cellB,2025-01-01T00:00:00Z",
    ])
    index = load_outlier_index(path)
    assert len(index) == 3
    assert ("cellA", ts(15)) in index


def test_load_index_header_only_is_valid_and_empty(tmp_path):
    index = load_outlier_index(write_index(tmp_path, []))
    assert len(index) == 0


def test_load_index_deduplicates(tmp_path):
    path = write_index(tmp_path, ["cellA,2025-01-01T00:00:00Z"] * 3)
    assert len(load_outlier_index(path)) == 1


def test_load_index_parse_error_reports_line(tmp_path):
    path = write_index(tmp_path, ["cellA,2025-01-01T00:00:00Z", "cellB,not-a-time"])
    with pytest.raises(OutlierIndexError, match="line 3"):
        load_outlier_index(path)


def test_load_index_bad_header(tmp_path):
    path = write_index(tmp_path, ["cellA,2025-01-01T00:00:00Z"], header="cell,when")
    with pytest.raises(OutlierIndexError, match="header"):
        load_outlier_index(path)


def test_index_dangling_reference_detected(tmp_path):
    ds = dataset_from_rows(linear_schema(1), [(0, "cellA", "r1", [1.0])])
    path = write_index(tmp_path, ["cellZ,2025-01-01T00:00:00Z"])
    index = load_outlier_index(path)
    with pytest.raises(OutlierIndexError, match="no dataset row"):
        index.validate_against(ds)


# -- baseline detector -------------------------------------------------------------


def table_of(ds):
    return compute_reference_table(ds, None, ContextLevel.CELL_KPI, WINDOW, MeasureSpec())


def test_constant_series_yields_empty_index():
    ds = dataset_from_rows(linear_schema(1), [(i * 15, "cellA", "r1", [5.0]) for i in range(20)])
    index = baseline_detect(ds, table_of(ds), z=1.0)
    assert len(index) == 0


def test_single_spike_in_flat_series_is_flagged():
    # Hand oracle: median=1, MAD=0 -> epsilon guard makes the spike's robust z huge.
    values = [1.0, 1.0, 1.0, 1.0, 10.0]
    ds = dataset_from_rows(linear_schema(1), [(i * 15, "cellA", "r1", [v]) for i, v in enumerate(values)])
    index = baseline_detect(ds, table_of(ds), z=3.0)
    assert index.entries == frozenset({("cellA", ts(60))})
    assert index.source == "baseline"
    assert index.threshold_used == 3.0


def test_injected_spikes_all_flagged_with_low_false_positives():
    rng = random.Random(11)
    schema = linear_schema(2)
    rows = []
    spikes = set()
    n_cells, n_slots = 5, 400
    for c in range(n_cells):
        cell = f"cell{c}"
        for i in range(n_slots):
            base = [rng.gauss(100, 5), rng.gauss(50, 2)]
            rows.append((i * 15, cell, "r1", base))
    # 50 spikes at 10x typical level, spread deterministically.
    k = 0
    while len(spikes) < 50:
        c, i = k % n_cells, (k * 37) % n_slots
        row = rows[c * n_slots + i]
        row[3][0] = 1000.0
        spikes.add((f"cell{c}", ts(i * 15)))
        k += 1
    ds = dataset_from_rows(schema, rows)
    index = baseline_detect(ds, table_of(ds), z=5.0)
    assert spikes <= index.entries
    false_positives = len(index.entries - spikes)
    assert false_positives < 0.01 * len(ds)


def test_monotonicity_in_z():
    rng = random.Random(3)
    ds = dataset_from_rows(
        linear_schema(1),
        [(i * 15, "cellA", "r1", [rng.gauss(0, 1)]) for i in range(300)],
    )
    table = table_of(ds)
    idx_lo = baseline_detect(ds, table, z=1.0)
    idx_hi = baseline_detect(ds, table, z=2.5)
    assert idx_hi.entries <= idx_lo.entries


def test_detection_is_permutation_invariant():
    rng = random.Random(5)
    rows = [(i * 15, f"cell{i % 3}", "r1", [rng.gauss(0, 1)]) for i in range(90)]
    ds1 = dataset_from_rows(linear_schema(1), rows)
    shuffled = list(rows)
    random.Random(9).shuffle(shuffled)
    ds2 = dataset_from_rows(linear_schema(1), shuffled)
    table = table_of(ds1)
    assert baseline_detect(ds1, table, z=1.5).entries == baseline_detect(ds2, table, z=1.5).entries


def test_missing_context_rows_are_skipped_and_counted():
    ds = dataset_from_rows(
        linear_schema(1),
        [(0, "cellA", "r1", [1.0]), (0, "cellB", "r1", [1000.0])],
    )
    # Table computed from cellA only: cellB has no context entry.
    sub = dataset_from_rows(linear_schema(1), [(0, "cellA", "r1", [1.0])])
    table = table_of(sub)
    index = baseline_detect(ds, table, z=1.0)
    assert index.skipped_missing_context == 1
    assert ("cellB", T0) not in index.entries
