"""Deterministic seeded generator of RAN-like KPI series with labeled anomaly
injections, for desk-scale end-to-end runs and tests.

Each KPI follows level + daily sinusoidal cycle + gaussian noise. Injected
patterns shift chosen KPIs up or down over a short span; occurrences never
overlap within a cell and keep enough separation that distinct occurrences do
not collate together.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import Dataset
from .model import FieldSchema, fmt_ts, parse_ts


class PlacementError(Exception):
    """Too many occurrences requested for the available horizon."""


class Direction(Enum):
    UP = "up"
    DOWN = "down"
    FLAT = "flat"


class MagnitudeKind(Enum):
    SIGMA = "sigma"  # shift = magnitude * noise std
    RATIO = "ratio"  # shift = magnitude * baseline level


@dataclass(frozen=True)
class KpiBaseline:
    level: float
    cycle_amplitude: float | None = None  # default 20% of level
    noise_std: float = 0.0

    def __post_init__(self) -> None:
        if self.noise_std < 0:
            raise ValueError("noise std must be >= 0")

    @property
    def amplitude(self) -> float:
        return 0.2 * self.level if self.cycle_amplitude is None else self.cycle_amplitude


@dataclass(frozen=True)
class InjectedPattern:
    pattern_id: str
    directions: tuple[Direction, ...]
    magnitude: float
    magnitude_kind: MagnitudeKind = MagnitudeKind.RATIO
    duration: int = 3
    occurrences: int = 1

    def __post_init__(self) -> None:
        if all(d is Direction.FLAT for d in self.directions):
            raise ValueError(f"pattern {self.pattern_id}: needs at least one non-flat direction")
        if self.occurrences < 1 or self.duration < 1:
            raise ValueError(f"pattern {self.pattern_id}: occurrences and duration must be >= 1")
        if self.magnitude <= 0:
            raise ValueError(f"pattern {self.pattern_id}: magnitude must be positive")


@dataclass(frozen=True)
class ScenarioSpec:
    n_cells: int = 50
    n_regions: int = 5
    n_kpis: int = 5
    interval: timedelta = timedelta(minutes=15)
    days: int = 30
    baselines: tuple[KpiBaseline, ...] = ()
    patterns: tuple[InjectedPattern, ...] = ()
    seed: int = 7
    start: datetime = datetime(2025, 1, 1, tzinfo=timezone.utc)
    kpi_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if min(self.n_cells, self.n_regions, self.n_kpis, self.days) < 1:
            raise ValueError("scenario counts must be >= 1")
        if self.baselines and len(self.baselines) != self.n_kpis:
            raise ValueError("one baseline per KPI required")
        for p in self.patterns:
            if len(p.directions) != self.n_kpis:
                raise ValueError(f"pattern {p.pattern_id}: needs {self.n_kpis} directions")
        if self.kpi_names and len(self.kpi_names) != self.n_kpis:
            raise ValueError("one name per KPI required")

    @property
    def names(self) -> tuple[str, ...]:
        return self.kpi_names or tuple(f"kpi{i + 1}" for i in range(self.n_kpis))

    @property
    def effective_baselines(self) -> tuple[KpiBaseline, ...]:
        if self.baselines:
            return self.baselines
        return tuple(KpiBaseline(level=100.0 * (i + 1)) for i in range(self.n_kpis))

    @property
    def slots_per_day(self) -> int:
        return int(timedelta(days=1) / self.interval)


@dataclass(frozen=True)
class GroundTruth:
    pattern_id: str
    cell_id: str
    t_start: datetime
    t_end: datetime


def _place_occurrences(
    spec: ScenarioSpec, rng: np.random.Generator
) -> list[tuple[InjectedPattern, int, int]]:
    """Pick (pattern, cell index, start slot) triples, non-overlapping per cell.

    A two-slot guard on both sides keeps distinct occurrences more than one
    interval apart, so collation cannot merge them.
    """
    n_slots = spec.days * spec.slots_per_day
    guard = 2
    taken: dict[int, list[tuple[int, int]]] = {c: [] for c in range(spec.n_cells)}
    placed: list[tuple[InjectedPattern, int, int]] = []

    for pattern in spec.patterns:
        for _ in range(pattern.occurrences):
            span = pattern.duration + 2 * guard
            for _attempt in range(2000):
                cell = int(rng.integers(0, spec.n_cells))
                start = int(rng.integers(guard, max(guard + 1, n_slots - span)))
                window = (start - guard, start + pattern.duration + guard)
                if all(window[1] <= lo or window[0] >= hi for lo, hi in taken[cell]):
                    taken[cell].append(window)
                    placed.append((pattern, cell, start))
                    break
            else:
                raise PlacementError(
                    f"could not place occurrence of {pattern.pattern_id}: "
                    f"horizon too crowded ({n_slots} slots, {spec.n_cells} cells)"
                )
    return placed


def generate(spec: ScenarioSpec) -> tuple[Dataset, list[GroundTruth]]:
    """Build the dataset and its injection ground truth, deterministically per seed.

    Placement and noise use separate seeded streams, so changing the pattern
    list never perturbs the baseline noise.
    """
    rng = np.random.default_rng([spec.seed, 0])
    rng_noise = np.random.default_rng([spec.seed, 1])
    names = spec.names
    baselines = spec.effective_baselines
    n_slots = spec.days * spec.slots_per_day
    slots = np.arange(n_slots)
    phase = 2.0 * np.pi * (slots % spec.slots_per_day) / spec.slots_per_day

    base = np.empty((n_slots, spec.n_kpis))
    for j, b in enumerate(baselines):
        base[:, j] = b.level + b.amplitude * np.sin(phase)

    placed = _place_occurrences(spec, rng)

    cells_per_region = -(-spec.n_cells // spec.n_regions)  # ceil division
    timestamps_one_cell = [spec.start + i * spec.interval for i in range(n_slots)]

    all_values = np.empty((spec.n_cells * n_slots, spec.n_kpis))
    cell_ids: list[str] = []
    region_ids: list[str] = []
    timestamps: list[datetime] = []

    shifts: dict[int, np.ndarray] = {}
    truth: list[GroundTruth] = []
    for pattern, cell, start in placed:
        shift_rows = shifts.setdefault(cell, np.zeros((n_slots, spec.n_kpis)))
        for j, (direction, b) in enumerate(zip(pattern.directions, baselines)):
            if direction is Direction.FLAT:
                continue
            unit = b.noise_std if pattern.magnitude_kind is MagnitudeKind.SIGMA else b.level
            delta = pattern.magnitude * unit
            sign = 1.0 if direction is Direction.UP else -1.0
            shift_rows[start : start + pattern.duration, j] += sign * delta
        truth.append(
            GroundTruth(
                pattern_id=pattern.pattern_id,
                cell_id=f"cell{cell + 1:03d}",
                t_start=timestamps_one_cell[start],
                t_end=timestamps_one_cell[start + pattern.duration - 1],
            )
        )

    for c in range(spec.n_cells):
        cell_name = f"cell{c + 1:03d}"
        region_name = f"region{c // cells_per_region + 1:02d}"
        block = base.copy()
        for j, b in enumerate(baselines):
            if b.noise_std > 0:
                block[:, j] += rng_noise.normal(0.0, b.noise_std, size=n_slots)
        if c in shifts:
            block += shifts[c]
        lo = c * n_slots
        all_values[lo : lo + n_slots] = block
        cell_ids.extend([cell_name] * n_slots)
        region_ids.extend([region_name] * n_slots)
        timestamps.extend(timestamps_one_cell)

    schema = FieldSchema.from_json([{"name": n} for n in names])
    dataset = Dataset(
        schema=schema,
        timestamps=timestamps,
        cell_ids=cell_ids,
        region_ids=region_ids,
        values=all_values,
        interval=spec.interval,
    )
    truth.sort(key=lambda g: (g.t_start, g.cell_id, g.pattern_id))
    return dataset, truth


def write_ground_truth(truth: Sequence[GroundTruth], path: str | Path) -> None:
    with Path(path).open("w") as fh:
        fh.write("pattern_id,cell_id,t_start,t_end\n")
        for g in truth:
            fh.write(f"{g.pattern_id},{g.cell_id},{fmt_ts(g.t_start)},{fmt_ts(g.t_end)}\n")


# -- scenario files -----------------------------------------------------------


def scenario_from_json(data: Mapping) -> ScenarioSpec:
    patterns = tuple(
        InjectedPattern(
            pattern_id=p["pattern_id"],
            directions=tuple(Direction(d) for d in p["directions"]),
            magnitude=float(p["magnitude"]),
            magnitude_kind=MagnitudeKind(p.get("magnitude_kind", "ratio")),
            duration=int(p.get("duration", 3)),
            occurrences=int(p.get("occurrences", 1)),
        )
        for p in data.get("patterns", ())
    )
    baselines = tuple(
        KpiBaseline(
            level=float(b["level"]),
            cycle_amplitude=float(b["cycle_amplitude"]) if b.get("cycle_amplitude") is not None else None,
            noise_std=float(b.get("noise_std", 0.0)),
        )
        for b in data.get("baselines", ())
    )
    return ScenarioSpec(
        n_cells=int(data.get("n_cells", 50)),
        n_regions=int(data.get("n_regions", 5)),
        n_kpis=int(data.get("n_kpis", 5)),
        interval=timedelta(minutes=float(data.get("interval_minutes", 15))),
        days=int(data.get("days", 30)),
        baselines=baselines,
        patterns=patterns,
        seed=int(data.get("seed", 7)),
        start=parse_ts(data["start"]) if data.get("start") else datetime(2025, 1, 1, tzinfo=timezone.utc),
        kpi_names=tuple(data.get("kpi_names", ())),
    )


def load_scenario(path: str | Path) -> ScenarioSpec:
    return scenario_from_json(json.loads(Path(path).read_text()))
