"""Synthetic scenario generator: determinism, shifts, placement guarantees."""

from __future__ import annotations

from datetime import timedelta

import numpy as np
import pytest

from rulemine.synth import (
    Direction,
    InjectedPattern,
    KpiBaseline,
    MagnitudeKind,
    PlacementError,
    ScenarioSpec,
    generate,
    scenario_from_json,
)

UP, DOWN, FLAT = Direction.UP, Direction.DOWN, Direction.FLAT


def noiseless_spec(**overrides) -> ScenarioSpec:
    defaults = dict(
        n_cells=3,
        n_regions=1,
        n_kpis=3,
        days=2,
        seed=5,
        baselines=tuple(KpiBaseline(level=100.0 * (i + 1), noise_std=0.0) for i in range(3)),
        patterns=(
            InjectedPattern("p1", (UP, DOWN, DOWN), magnitude=3.0,
                            magnitude_kind=MagnitudeKind.RATIO, duration=2, occurrences=4),
        ),
    )
    defaults.update(overrides)
    return ScenarioSpec(**defaults)


def test_same_seed_reproduces_identical_dataset(tmp_path):
    ds1, truth1 = generate(noiseless_spec())
    ds2, truth2 = generate(noiseless_spec())
    assert truth1 == truth2
    assert np.array_equal(ds1.values, ds2.values)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    ds1.to_csv(a)
    ds2.to_csv(b)
    assert a.read_bytes() == b.read_bytes()


def test_distinct_seeds_differ():
    _, t1 = generate(noiseless_spec(seed=1))
    _, t2 = generate(noiseless_spec(seed=2))
    assert t1 != t2


def test_noiseless_injection_shifts_exactly():
    spec = noiseless_spec()
    ds, truth = generate(spec)
    base_spec = noiseless_spec(patterns=())
    base_ds, _ = generate(base_spec)
    shifts = ds.values - base_ds.values
    rows_by_cell = ds.rows_by_cell()
    for g in truth:
        for i in rows_by_cell[g.cell_id]:
            t = ds.timestamps[i]
            if g.t_start <= t <= g.t_end:
                assert shifts[i, 0] == 300.0   # 3.0 x level 100, up
                assert shifts[i, 1] == -600.0  # 3.0 x level 200, down
                assert shifts[i, 2] == -900.0  # 3.0 x level 300, down
    # Outside injections nothing moved.
    injected_rows = {
        i
        for g in truth
        for i in rows_by_cell[g.cell_id]
        if g.t_start <= ds.timestamps[i] <= g.t_end
    }
    untouched = np.ones(len(ds), dtype=bool)
    untouched[list(injected_rows)] = False
    assert np.all(shifts[untouched] == 0.0)


def test_ground_truth_matches_occurrence_count():
    spec = noiseless_spec()
    _, truth = generate(spec)
    assert len(truth) == 4
    assert {g.pattern_id for g in truth} == {"p1"}


def test_injections_never_overlap_and_keep_separation():
    spec = noiseless_spec(days=2, patterns=(
        InjectedPattern("p1", (UP, FLAT, FLAT), magnitude=2.0, duration=3, occurrences=10),
        InjectedPattern("p2", (FLAT, DOWN, FLAT), magnitude=2.0, duration=2, occurrences=10),
    ))
    ds, truth = generate(spec)
    per_cell: dict[str, list] = {}
    for g in truth:
        per_cell.setdefault(g.cell_id, []).append(g)
    for cell, groups in per_cell.items():
        groups.sort(key=lambda g: g.t_start)
        for a, b in zip(groups, groups[1:]):
            # More than one interval between occurrences: collation cannot merge them.
            assert b.t_start - a.t_end > spec.interval


def test_infeasible_placement_raises():
    spec = noiseless_spec(
        n_cells=1,
        days=1,
        patterns=(InjectedPattern("p1", (UP, FLAT, FLAT), magnitude=2.0,
                                  duration=40, occurrences=50),),
    )
    with pytest.raises(PlacementError):
        generate(spec)


def test_sigma_magnitude_uses_noise_std():
    spec = noiseless_spec(
        baselines=tuple(KpiBaseline(level=100.0, noise_std=2.0, cycle_amplitude=0.0) for _ in range(3)),
        patterns=(InjectedPattern("p1", (UP, FLAT, FLAT), magnitude=10.0,
                                  magnitude_kind=MagnitudeKind.SIGMA, duration=1, occurrences=2),),
    )
    ds, truth = generate(spec)
    base, _ = generate(
        noiseless_spec(
            baselines=tuple(KpiBaseline(level=100.0, noise_std=2.0, cycle_amplitude=0.0) for _ in range(3)),
            patterns=(),
        )
    )
    shifts = ds.values - base.values
    rows_by_cell = ds.rows_by_cell()
    for g in truth:
        rows = [i for i in rows_by_cell[g.cell_id] if g.t_start <= ds.timestamps[i] <= g.t_end]
        for i in rows:
            assert shifts[i, 0] == pytest.approx(20.0)  # 10 sigma x std 2


def test_scenario_json_parsing():
    spec = scenario_from_json({
        "n_cells": 4, "n_regions": 2, "n_kpis": 2, "days": 1, "seed": 3,
        "interval_minutes": 30,
        "baselines": [{"level": 10.0}, {"level": 20.0, "noise_std": 1.0}],
        "patterns": [
            {"pattern_id": "a", "directions": ["up", "down"], "magnitude": 2.5,
             "duration": 2, "occurrences": 3}
        ],
    })
    assert spec.interval == timedelta(minutes=30)
    assert spec.patterns[0].directions == (UP, DOWN)
    ds, truth = generate(spec)
    assert len(truth) == 3
    assert len(ds) == 4 * 48
