"""Training and application phases.

Training: detect (or load an external index) -> reference table -> collate ->
generate rules, persisted as a bundle directory. Application: per-record
match-or-discover against the loaded bundle, with periodic reference refresh.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .collation import (
    CollationMode,
    CollatorState,
    collate_batch,
    collate_close_all,
    collate_flush,
    collate_stream,
)
from .config import ConfigError, PipelineConfig
from .dataset import Dataset
from .detector import MAD_EPSILON, OutlierIndex, baseline_detect, load_outlier_index
from .engine import (
    Diagnostics,
    MatchExtras,
    formulate_vector,
    generate_ruleset,
    match_rule,
)
from .model import (
    CollatedOutlier,
    Condition,
    KpiRecord,
    Response,
    Rule,
    RuleSet,
    Scale,
    fmt_ts,
    key_of,
    parse_ts,
    utcnow,
)
from .references import ReferenceTable, compute_reference_table, update_references


class StageError(Exception):
    """A training stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")


# ---------------------------------------------------------------------------
# Events
# ---------------------------------------------------------------------------

_event_counter = itertools.count()


def new_event_id(at: datetime) -> str:
    """Sortable event id: millisecond timestamp plus an in-process counter."""
    ms = int(at.timestamp() * 1000)
    return f"ev{ms:013d}-{next(_event_counter) % 1_000_000:06d}"


@dataclass(frozen=True)
class AnomalyEvent:
    event_id: str
    cell_id: str
    group_id: str
    t_start: datetime
    t_end: datetime
    duration: int
    vector: tuple[Condition, ...]
    matched_rule_id: str | None
    response_taken: Response
    emitted_at: datetime
    supersedes: str | None = None
    aggregated: tuple[float, ...] = ()

    def to_json(self) -> dict:
        return {
            "event_id": self.event_id,
            "cell_id": self.cell_id,
            "group_id": self.group_id,
            "t_start": fmt_ts(self.t_start),
            "t_end": fmt_ts(self.t_end),
            "duration": self.duration,
            "vector": [c.glyph for c in self.vector],
            "matched_rule_id": self.matched_rule_id,
            "response_taken": self.response_taken.to_json(),
            "emitted_at": fmt_ts(self.emitted_at),
            "supersedes": self.supersedes,
            "aggregated": [None if math.isnan(v) else v for v in self.aggregated],
        }


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainBundle:
    """Everything the application phase and the appraisal service need."""

    config: PipelineConfig
    table: ReferenceTable
    ruleset: RuleSet
    outliers: list[CollatedOutlier]  # training occurrences, collated
    diagnostics: dict


def _outlier_records(dataset: Dataset, index: OutlierIndex) -> list[KpiRecord]:
    """Flagged rows as per-cell time-ordered records."""
    flagged = [
        i
        for i in range(len(dataset))
        if (dataset.cell_ids[i], dataset.timestamps[i]) in index.entries
    ]
    flagged.sort(key=lambda i: (dataset.timestamps[i], dataset.cell_ids[i]))
    return [dataset.record(i) for i in flagged]


def _validate_ratio_fields(dataset: Dataset, config: PipelineConfig) -> None:
    for j, spec in enumerate(config.schema):
        if spec.scale is Scale.EXPONENTIAL:
            col = dataset.values[:, j]
            if np.nanmin(col) < 0:
                raise ConfigError(
                    f"field {spec.name!r} uses a ratio threshold but has negative values"
                )


def train(dataset: Dataset, config: PipelineConfig) -> TrainBundle:
    """Run the full training phase. Any stage failure aborts before persistence."""
    window = (dataset.span[0], dataset.span[1] + config.interval)

    try:
        _validate_ratio_fields(dataset, config)
    except Exception as exc:
        raise StageError("validate", exc) from exc

    try:
        if config.detector.kind == "external":
            index = load_outlier_index(config.detector.index_path)
            index.validate_against(dataset)
        else:
            # Bootstrap stats without outlier labels, then detect against them.
            bootstrap = compute_reference_table(
                dataset, None, config.level, window, config.measure, exclude_outliers=False
            )
            index = baseline_detect(dataset, bootstrap, config.detector.z)
    except StageError:
        raise
    except Exception as exc:
        raise StageError("detect", exc) from exc

    try:
        table = compute_reference_table(
            dataset,
            set(index.entries),
            config.level,
            window,
            config.measure,
            exclude_outliers=config.drift.exclude_outliers,
        )
    except Exception as exc:
        raise StageError("references", exc) from exc

    try:
        records = _outlier_records(dataset, index)
        occurrences = collate_batch(records, config.schema, config.collation)
    except Exception as exc:
        raise StageError("collate", exc) from exc

    try:
        diag = Diagnostics()
        ruleset = generate_ruleset(
            occurrences, table, config.classify, created_at=table.computed_at, diagnostics=diag
        )
    except Exception as exc:
        raise StageError("rules", exc) from exc

    diagnostics = {
        "records": len(dataset),
        "flagged_records": len(index),
        "occurrences": len(occurrences),
        "rules": len(ruleset.unappraised),
        "detector": {
            "source": index.source,
            "threshold_used": None if math.isnan(index.threshold_used) else index.threshold_used,
            "skipped_missing_context": index.skipped_missing_context,
        },
        "reference_gaps": [list(k) for k in table.gaps],
        "classification_gaps": [list(k) for k in diag.reference_gaps],
        "imputed_fields": diag.imputed_fields,
        "counts_by_rule": {
            r.rule_id: r.count
            for r in sorted(ruleset.unappraised.values(), key=lambda r: (-r.count, r.rule_id))
        },
    }
    return TrainBundle(
        config=config,
        table=table,
        ruleset=ruleset,
        outliers=occurrences,
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# Bundle persistence
# ---------------------------------------------------------------------------


def _outlier_to_json(o: CollatedOutlier) -> dict:
    return {
        "cell_id": o.cell_id,
        "region_id": o.region_id,
        "t_start": fmt_ts(o.t_start),
        "t_end": fmt_ts(o.t_end),
        "duration": o.duration,
        "aggregated": [None if math.isnan(v) else v for v in o.aggregated],
    }


def _outlier_from_json(data: Mapping) -> CollatedOutlier:
    return CollatedOutlier(
        cell_id=data["cell_id"],
        region_id=data["region_id"],
        t_start=parse_ts(data["t_start"]),
        t_end=parse_ts(data["t_end"]),
        duration=int(data["duration"]),
        aggregated=tuple(math.nan if v is None else float(v) for v in data["aggregated"]),
    )


BUNDLE_FILES = ("config.json", "references.json", "rules.json", "outliers.json", "diagnostics.json")


def save_bundle(bundle: TrainBundle, out_dir: str | Path) -> Path:
    """Persist a bundle directory. Payloads are rendered before any write, so a
    render failure leaves nothing behind."""
    out = Path(out_dir)
    payloads = {
        "config.json": bundle.config.dumps(),
        "references.json": bundle.table.dumps(),
        "rules.json": bundle.ruleset.dumps(),
        "outliers.json": json.dumps([_outlier_to_json(o) for o in bundle.outliers], indent=2) + "\n",
        "diagnostics.json": json.dumps(bundle.diagnostics, indent=2) + "\n",
        "meta.json": json.dumps({"written_at": fmt_ts(utcnow())}, indent=2) + "\n",
    }
    out.mkdir(parents=True, exist_ok=True)
    for name, text in payloads.items():
        (out / name).write_text(text)
    return out


def load_bundle(bundle_dir: str | Path) -> TrainBundle:
    path = Path(bundle_dir)
    missing = [n for n in BUNDLE_FILES if not (path / n).exists()]
    if missing:
        raise FileNotFoundError(f"bundle at {path} is missing {missing}")
    config = PipelineConfig.load(path / "config.json")
    table = ReferenceTable.loads((path / "references.json").read_text())
    ruleset = RuleSet.loads((path / "rules.json").read_text())
    outliers = [_outlier_from_json(o) for o in json.loads((path / "outliers.json").read_text())]
    diagnostics = json.loads((path / "diagnostics.json").read_text())
    return TrainBundle(
        config=config, table=table, ruleset=ruleset, outliers=outliers, diagnostics=diagnostics
    )


# ---------------------------------------------------------------------------
# Application phase
# ---------------------------------------------------------------------------


@dataclass
class ApplyState:
    """Evolving state of the application phase.

    Swapped wholesale by the single writer; everything inside is replaced, not
    mutated, so a reader holding an old snapshot stays consistent.
    """

    refs: ReferenceTable
    ruleset: RuleSet
    collator: CollatorState = field(default_factory=CollatorState)
    last_event_by_group: dict[str, str] = field(default_factory=dict)
    counted_by_group: dict[str, set[str]] = field(default_factory=dict)
    last_ts: dict[str, datetime] = field(default_factory=dict)
    skipped_missing_context: int = 0

    @classmethod
    def from_bundle(cls, bundle: TrainBundle) -> "ApplyState":
        return cls(refs=bundle.table, ruleset=bundle.ruleset)


def is_outlier_record(record: KpiRecord, refs: ReferenceTable, config: PipelineConfig) -> bool | None:
    """Robust-z check of one record against the current reference snapshot.

    Returns None when any field's context is missing (record skipped).
    """
    for i, spec in enumerate(config.schema):
        entry = refs.lookup(spec.name, cell_id=record.cell_id, region_id=record.region_id)
        if entry is None:
            return None
        x = record.values[i]
        if math.isnan(x):
            continue
        if abs(x - entry.median) / (entry.mad + MAD_EPSILON) > config.detector.z:
            return True
    return False


def apply_step(
    record: KpiRecord,
    state: ApplyState,
    bundle: TrainBundle,
    now: datetime | None = None,
    is_outlier: bool | None = None,
) -> tuple[ApplyState, list[AnomalyEvent]]:
    """Ingest one record: detect, collate, then match-or-discover per emission.

    ``is_outlier`` overrides the builtin check (external detector flags).
    """
    config = bundle.config
    at = now if now is not None else record.timestamp

    prev = state.last_ts.get(record.cell_id)
    if prev is not None and record.timestamp < prev:
        raise ValueError(
            f"cell {record.cell_id}: record at {fmt_ts(record.timestamp)} "
            f"precedes {fmt_ts(prev)}"
        )

    flagged = is_outlier
    if flagged is None:
        verdict = is_outlier_record(record, state.refs, config)
        if verdict is None:
            state.skipped_missing_context += 1
            flagged = False
        else:
            flagged = verdict

    # last_ts and group bookkeeping are writer-internal: mutated in place, never
    # read through older snapshots.
    state.last_ts[record.cell_id] = record.timestamp

    if flagged:
        collator, emissions = collate_stream(
            state.collator, record, at, config.schema, config.collation
        )
    elif state.collator.has_open(record.cell_id):
        collator, emissions = collate_flush(
            state.collator, at, config.collation, cells=[record.cell_id]
        )
    else:
        return state, []

    closed = len(collator.open_groups) < len(state.collator.open_groups) or emissions
    new_state = replace(state, collator=collator)
    events = [_process_occurrence(occ, new_state, bundle, at) for occ in emissions]
    if closed:
        _prune_closed_groups(new_state)
    return new_state, events


def apply_tick(
    state: ApplyState, bundle: TrainBundle, now: datetime
) -> tuple[ApplyState, list[AnomalyEvent]]:
    """Clock tick across all cells: close elapsed groups and emit their events."""
    if not state.collator.open_groups:
        return state, []
    collator, emissions = collate_flush(state.collator, now, bundle.config.collation)
    new_state = replace(state, collator=collator)
    events = [_process_occurrence(occ, new_state, bundle, now) for occ in emissions]
    if len(collator.open_groups) < len(state.collator.open_groups):
        _prune_closed_groups(new_state)
    return new_state, events


def apply_close(
    state: ApplyState, bundle: TrainBundle, now: datetime | None = None
) -> tuple[ApplyState, list[AnomalyEvent]]:
    """End of stream: close every open group."""
    collator, emissions = collate_close_all(state.collator, bundle.config.collation)
    new_state = replace(state, collator=collator)
    at = now if now is not None else (emissions[-1].t_end if emissions else utcnow())
    events = [_process_occurrence(occ, new_state, bundle, at) for occ in emissions]
    _prune_closed_groups(new_state)
    return new_state, events


def _prune_closed_groups(state: ApplyState) -> None:
    """Drop per-group bookkeeping once a group has closed. A closed group's id
    never recurs (it embeds the start timestamp), so this only bounds memory."""
    live = {group.group_id for group in state.collator.open_groups.values()}
    state.last_event_by_group = {
        gid: ev for gid, ev in state.last_event_by_group.items() if gid in live
    }
    state.counted_by_group = {
        gid: keys for gid, keys in state.counted_by_group.items() if gid in live
    }


def _process_occurrence(
    occurrence: CollatedOutlier, state: ApplyState, bundle: TrainBundle, now: datetime
) -> AnomalyEvent:
    """Match an occurrence against the appraised set or discover a new rule.

    Mutates ``state`` in place (ruleset swap, group bookkeeping); callers hold
    the single-writer role.
    """
    config = bundle.config
    vector = formulate_vector(occurrence, state.refs, config.classify)
    extras = MatchExtras(occurrence.duration, occurrence.aggregated)
    rule = match_rule(vector, extras, state.ruleset)
    group_id = occurrence.group_id

    if rule is not None:
        matched_id: str | None = rule.rule_id
        response = rule.response
    else:
        matched_id = None
        response = config.appraisal.default_response
        state.ruleset = _discover(state, vector, group_id, now)

    event = AnomalyEvent(
        event_id=new_event_id(now),
        cell_id=occurrence.cell_id,
        group_id=group_id,
        t_start=occurrence.t_start,
        t_end=occurrence.t_end,
        duration=occurrence.duration,
        vector=vector,
        matched_rule_id=matched_id,
        response_taken=response,
        emitted_at=now,
        supersedes=state.last_event_by_group.get(group_id),
        aggregated=occurrence.aggregated,
    )
    state.last_event_by_group[group_id] = event.event_id
    return event


def _discover(
    state: ApplyState, vector: tuple[Condition, ...], group_id: str, now: datetime
) -> RuleSet:
    """Add or increment the unappraised rule for an unseen vector.

    Each group contributes at most once per distinct vector, so eager-mode
    superseding snapshots do not inflate counts.
    """
    key = key_of(vector)
    counted = state.counted_by_group.setdefault(group_id, set())
    if key in counted:
        return state.ruleset
    counted.add(key)

    unappraised = dict(state.ruleset.unappraised)
    existing = unappraised.get(key)
    if existing is not None:
        unappraised[key] = replace(existing, count=existing.count + 1)
    else:
        unappraised[key] = Rule(conditions=vector, count=1, created_at=now)
    return state.ruleset.replace_buckets(unappraised=unappraised)


def refresh_references(
    state: ApplyState,
    dataset_window: Dataset,
    now: datetime,
    bundle: TrainBundle,
    outlier_index: set | None = None,
) -> ApplyState:
    """Periodic reference recomputation; swaps the snapshot only on success."""
    refreshed = update_references(
        state.refs, dataset_window, now, bundle.config.drift, outlier_index=outlier_index
    )
    if refreshed is state.refs:
        return state
    return replace(state, refs=refreshed)


# ---------------------------------------------------------------------------
# Replay
# ---------------------------------------------------------------------------


def replay(
    dataset: Dataset,
    bundle: TrainBundle,
    mode: CollationMode | None = None,
    on_event: Callable[[AnomalyEvent], None] | None = None,
) -> tuple[ApplyState, list[AnomalyEvent]]:
    """Stream a dataset through the application phase in timestamp order."""
    config = bundle.config
    if mode is not None and mode is not config.collation.mode:
        config = replace(config, collation=replace(config.collation, mode=mode))
        bundle = replace(bundle, config=config)

    state = ApplyState.from_bundle(bundle)
    order = sorted(range(len(dataset)), key=lambda i: (dataset.timestamps[i], dataset.cell_ids[i]))
    events: list[AnomalyEvent] = []

    def push(batch: list[AnomalyEvent]) -> None:
        events.extend(batch)
        if on_event is not None:
            for ev in batch:
                on_event(ev)

    last_now: datetime | None = None
    for i in order:
        ts = dataset.timestamps[i]
        if last_now is not None and ts > last_now:
            state, late = apply_tick(state, bundle, ts)
            push(late)
        last_now = ts
        state, batch = apply_step(dataset.record(i), state, bundle, now=ts)
        push(batch)

    state, tail = apply_close(state, bundle, now=last_now)
    push(tail)
    return state, events
