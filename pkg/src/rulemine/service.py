"""HTTP service hosting the appraisal workflow and the live match-or-discover loop.

Single-operator tool: one logical writer guards the rule store; every mutation
swaps in a fresh snapshot, and readers (rule listing, matching, the event
stream) only ever see complete states. Appraisal actions append to an audit
log; executed responses append to an action log.
"""

from __future__ import annotations

import asyncio
import json
import math
import os
import threading
from collections import OrderedDict
from pathlib import Path
from typing import Any

from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import StreamingResponse
from pydantic import BaseModel

from .dataset import Dataset
from .engine import (
    MatchExtras,
    assign_response,
    combine_rules,
    formulate_vector,
    recount,
    split_rule,
    vector_satisfies,
    whitelist_rule,
)
from .model import (
    KpiRecord,
    Response,
    RuleSetError,
    RuleStatus,
    extended_from_json,
    fmt_ts,
    key_of,
    parse_ts,
    utcnow,
)
from .pipeline import (
    AnomalyEvent,
    ApplyState,
    TrainBundle,
    apply_step,
    apply_tick,
    new_event_id,
)

RECORD_BUFFER_LIMIT = 100_000
OUTCOME_BUFFER_LIMIT = 100_000
SERIES_PAD_INTERVALS = 12


# ---------------------------------------------------------------------------
# Request models
# ---------------------------------------------------------------------------


class AppraiseRequest(BaseModel):
    action: str
    response: dict | None = None
    masks: list[list[int]] | None = None
    target_rule_id: str | None = None
    extended: list[dict] | None = None
    actor: str = "api"


class RecordIn(BaseModel):
    timestamp: str
    cell_id: str
    region_id: str = ""
    values: list[float | None]


class IngestRequest(BaseModel):
    records: list[RecordIn]


class FlagIn(BaseModel):
    cell_id: str
    timestamp: str


class OutlierFlagsRequest(BaseModel):
    entries: list[FlagIn]


# ---------------------------------------------------------------------------
# Service state
# ---------------------------------------------------------------------------


class ServiceState:
    """Bundle + live apply state + event fan-out, guarded by one writer lock."""

    def __init__(
        self,
        bundle: TrainBundle,
        dataset: Dataset | None = None,
        audit_log: Path | None = None,
        action_log: Path | None = None,
        rules_path: Path | None = None,
    ):
        self.bundle = bundle
        self.dataset = dataset
        self.state = ApplyState.from_bundle(bundle)
        self.lock = threading.Lock()
        self.audit_log = audit_log
        self.action_log = action_log
        self.rules_path = rules_path
        self.anomalies: list[AnomalyEvent] = []
        self.recent_records: OrderedDict[tuple[str, str], KpiRecord] = OrderedDict()
        self.subscribers: list[asyncio.Queue] = []
        self._executed_outcome: OrderedDict[str, str] = OrderedDict()
        self._seed_training_anomalies()

    def persist_rules(self) -> None:
        """Write the live rule set back to its JSON file (atomic replace), so
        appraisals and discoveries survive a service restart."""
        if self.rules_path is None:
            return
        tmp = self.rules_path.with_suffix(".json.tmp")
        tmp.write_text(self.state.ruleset.dumps())
        os.replace(tmp, self.rules_path)

    def _seed_training_anomalies(self) -> None:
        """Expose training occurrences through the anomaly listing, tied to the
        rule their vector generated."""
        cfg = self.bundle.config
        for occurrence in self.bundle.outliers:
            vector = formulate_vector(occurrence, self.bundle.table, cfg.classify)
            rule = self.bundle.ruleset.unappraised.get(key_of(vector)) or (
                self.bundle.ruleset.appraised.get(key_of(vector))
            )
            self.anomalies.append(
                AnomalyEvent(
                    event_id=new_event_id(occurrence.t_end),
                    cell_id=occurrence.cell_id,
                    group_id=occurrence.group_id,
                    t_start=occurrence.t_start,
                    t_end=occurrence.t_end,
                    duration=occurrence.duration,
                    vector=vector,
                    matched_rule_id=rule.rule_id if rule else None,
                    response_taken=rule.response if rule else cfg.appraisal.default_response,
                    emitted_at=occurrence.t_end,
                    aggregated=occurrence.aggregated,
                )
            )

    # -- events ---------------------------------------------------------------

    def publish(self, event: AnomalyEvent) -> None:
        self.anomalies.append(event)
        self._execute_response(event)
        for q in list(self.subscribers):
            q.put_nowait(event)

    def _execute_response(self, event: AnomalyEvent) -> None:
        """Append an action record once per group outcome; superseding snapshots
        with an unchanged outcome do not re-fire."""
        outcome = event.matched_rule_id or "__default__"
        if event.response_taken.kind.value == "null":
            self._remember_outcome(event.group_id, outcome)
            return
        if self._executed_outcome.get(event.group_id) == outcome:
            return
        self._remember_outcome(event.group_id, outcome)
        if self.action_log is not None:
            record = {
                "at": fmt_ts(utcnow()),
                "event_id": event.event_id,
                "group_id": event.group_id,
                "cell_id": event.cell_id,
                "rule_id": event.matched_rule_id,
                "response": event.response_taken.to_json(),
            }
            with self.action_log.open("a") as fh:
                fh.write(json.dumps(record) + "\n")

    def _remember_outcome(self, group_id: str, outcome: str) -> None:
        self._executed_outcome[group_id] = outcome
        while len(self._executed_outcome) > OUTCOME_BUFFER_LIMIT:
            self._executed_outcome.popitem(last=False)

    def audit(self, entry: dict) -> None:
        if self.audit_log is not None:
            with self.audit_log.open("a") as fh:
                fh.write(json.dumps(entry) + "\n")

    # -- record buffer ----------------------------------------------------------

    def remember(self, record: KpiRecord) -> None:
        self.recent_records[(record.cell_id, fmt_ts(record.timestamp))] = record
        while len(self.recent_records) > RECORD_BUFFER_LIMIT:
            self.recent_records.popitem(last=False)


def _rule_sort_key(rule) -> tuple:
    return (-rule.count, rule.rule_id)


def create_app(
    bundle: TrainBundle,
    dataset: Dataset | None = None,
    audit_log: str | Path | None = None,
    action_log: str | Path | None = None,
    rules_path: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="rulemine", version="0.1.0")
    # Single-operator tool; the browser UI is served from another origin.
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    svc = ServiceState(
        bundle,
        dataset=dataset,
        audit_log=Path(audit_log) if audit_log else None,
        action_log=Path(action_log) if action_log else None,
        rules_path=Path(rules_path) if rules_path else None,
    )
    app.state.svc = svc

    # -- health ---------------------------------------------------------------

    @app.get("/healthz")
    async def healthz() -> dict:
        return {
            "status": "ok",
            "rules": len(svc.state.ruleset),
            "anomalies": len(svc.anomalies),
        }

    # -- rules ------------------------------------------------------------------

    @app.get("/rules")
    async def list_rules(status: str | None = None) -> dict:
        rules = svc.state.ruleset.all_rules()
        if status is not None:
            try:
                wanted = RuleStatus(status)
            except ValueError:
                raise HTTPException(422, f"unknown status {status!r}")
            rules = [r for r in rules if r.status is wanted]
        rules.sort(key=_rule_sort_key)
        return {"rules": [r.to_json() for r in rules], "fields": list(bundle.config.schema.names)}

    @app.get("/rules/{rule_id}")
    async def get_rule(rule_id: str) -> dict:
        try:
            rule = svc.state.ruleset.find(rule_id)
        except RuleSetError:
            raise HTTPException(404, f"rule not found: {rule_id}")
        return rule.to_json()

    @app.post("/rules/{rule_id}/appraise")
    async def appraise(rule_id: str, req: AppraiseRequest) -> dict:
        with svc.lock:
            ruleset = svc.state.ruleset
            try:
                before = ruleset.find(rule_id)
            except RuleSetError:
                raise HTTPException(404, f"rule not found: {rule_id}")
            keys_before = set(ruleset.unappraised) | set(ruleset.appraised)
            needs_recount = False
            try:
                if req.action == "assign":
                    if req.response is None:
                        raise HTTPException(422, "assign needs a response body")
                    response = Response.from_json(req.response)
                    extended = tuple(extended_from_json(e) for e in (req.extended or ()))
                    ruleset = assign_response(ruleset, rule_id, response, extended)
                    needs_recount = bool(extended)
                elif req.action == "whitelist":
                    ruleset = whitelist_rule(ruleset, rule_id)
                elif req.action == "split":
                    if not req.masks:
                        raise HTTPException(422, "split needs masks")
                    ruleset = split_rule(ruleset, rule_id, req.masks)
                    needs_recount = True
                elif req.action == "combine":
                    if not req.target_rule_id:
                        raise HTTPException(422, "combine needs target_rule_id")
                    ruleset = combine_rules(ruleset, rule_id, req.target_rule_id)
                    needs_recount = True
                else:
                    raise HTTPException(422, f"unknown action {req.action!r}")
            except RuleSetError as exc:
                raise HTTPException(409, str(exc))
            except ValueError as exc:
                raise HTTPException(422, str(exc))
            if needs_recount:
                ruleset = recount(
                    ruleset, svc.bundle.outliers, svc.state.refs, bundle.config.classify
                )
            svc.state.ruleset = ruleset
            svc.persist_rules()
            keys_after = set(ruleset.unappraised) | set(ruleset.appraised)
            svc.audit(
                {
                    "at": fmt_ts(utcnow()),
                    "actor": req.actor,
                    "action": req.action,
                    "rule_id": rule_id,
                    "before_key": key_of(before.conditions, before.extended),
                    "keys_added": sorted(keys_after - keys_before),
                    "keys_removed": sorted(keys_before - keys_after),
                    "target_rule_id": req.target_rule_id,
                    "masks": req.masks,
                    "ruleset_size": len(ruleset),
                }
            )
        rules = sorted(ruleset.all_rules(), key=_rule_sort_key)
        return {"ok": True, "rules": [r.to_json() for r in rules]}

    # -- anomalies ----------------------------------------------------------------

    @app.get("/anomalies")
    async def list_anomalies(
        rule_id: str | None = None,
        t_from: str | None = Query(None, alias="from"),
        t_to: str | None = Query(None, alias="to"),
        page: int = 1,
        page_size: int = 50,
    ) -> dict:
        items = list(svc.anomalies)
        if rule_id is not None:
            try:
                rule = svc.state.ruleset.find(rule_id)
            except RuleSetError:
                raise HTTPException(404, f"rule not found: {rule_id}")
            items = [
                ev
                for ev in items
                if vector_satisfies(rule, ev.vector, MatchExtras(ev.duration, ev.aggregated))
            ]
        if t_from is not None:
            start = parse_ts(t_from)
            items = [ev for ev in items if ev.t_end >= start]
        if t_to is not None:
            end = parse_ts(t_to)
            items = [ev for ev in items if ev.t_start <= end]
        total = len(items)
        if page < 1 or page_size < 1:
            raise HTTPException(422, "page and page_size must be >= 1")
        lo = (page - 1) * page_size
        return {
            "items": [ev.to_json() for ev in items[lo : lo + page_size]],
            "total": total,
            "page": page,
            "page_size": page_size,
        }

    @app.get("/anomalies/{event_id}/series")
    async def anomaly_series(event_id: str, pad: int = SERIES_PAD_INTERVALS) -> dict:
        event = next((ev for ev in svc.anomalies if ev.event_id == event_id), None)
        if event is None:
            raise HTTPException(404, f"anomaly not found: {event_id}")
        if svc.dataset is None:
            raise HTTPException(404, "no dataset attached to this service")
        interval = bundle.config.interval
        lo = event.t_start - pad * interval
        hi = event.t_end + pad * interval
        ds = svc.dataset
        rows = [
            i
            for i in ds.rows_by_cell().get(event.cell_id, [])
            if lo <= ds.timestamps[i] <= hi
        ]
        rows.sort(key=lambda i: ds.timestamps[i])
        region = ds.region_ids[rows[0]] if rows else None
        series = []
        for j, name in enumerate(ds.schema.names):
            entry = (
                svc.state.refs.lookup(name, cell_id=event.cell_id, region_id=region)
                if rows
                else None
            )
            points = [
                {
                    "t": fmt_ts(ds.timestamps[i]),
                    "value": None if math.isnan(ds.values[i, j]) else float(ds.values[i, j]),
                }
                for i in rows
            ]
            series.append(
                {"kpi": name, "ref": entry.ref if entry else None, "points": points}
            )
        return {
            "event": event.to_json(),
            "interval_seconds": interval.total_seconds(),
            "series": series,
        }

    # -- ingestion ------------------------------------------------------------------

    def _to_record(raw: RecordIn) -> KpiRecord:
        n = len(bundle.config.schema)
        if len(raw.values) != n:
            raise HTTPException(422, f"record needs {n} values, got {len(raw.values)}")
        return KpiRecord(
            timestamp=parse_ts(raw.timestamp),
            cell_id=raw.cell_id,
            region_id=raw.region_id,
            values=tuple(math.nan if v is None else float(v) for v in raw.values),
        )

    @app.post("/ingest")
    async def ingest(req: IngestRequest) -> dict:
        external = bundle.config.detector.kind == "external"
        emitted: list[AnomalyEvent] = []
        with svc.lock:
            ruleset_before = svc.state.ruleset
            last_ts = None
            for raw in req.records:
                record = _to_record(raw)
                svc.remember(record)
                last_ts = record.timestamp if last_ts is None else max(last_ts, record.timestamp)
                if external:
                    continue  # flags arrive via POST /outliers
                try:
                    svc.state, events = apply_step(record, svc.state, svc.bundle)
                except ValueError as exc:
                    raise HTTPException(422, str(exc))
                emitted.extend(events)
            if last_ts is not None:
                svc.state, events = apply_tick(svc.state, svc.bundle, last_ts)
                emitted.extend(events)
            for ev in emitted:
                svc.publish(ev)
            if svc.state.ruleset is not ruleset_before:  # discoveries landed
                svc.persist_rules()
        return {"accepted": len(req.records), "events": [ev.to_json() for ev in emitted]}

    @app.post("/outliers")
    async def push_outliers(req: OutlierFlagsRequest) -> dict:
        emitted: list[AnomalyEvent] = []
        unknown: list[str] = []
        with svc.lock:
            ruleset_before = svc.state.ruleset
            for flag in req.entries:
                ts = parse_ts(flag.timestamp)
                record = svc.recent_records.get((flag.cell_id, fmt_ts(ts)))
                if record is None:
                    unknown.append(f"{flag.cell_id}@{flag.timestamp}")
                    continue
                try:
                    svc.state, events = apply_step(
                        record, svc.state, svc.bundle, is_outlier=True
                    )
                except ValueError as exc:
                    raise HTTPException(422, str(exc))
                emitted.extend(events)
            for ev in emitted:
                svc.publish(ev)
            if svc.state.ruleset is not ruleset_before:
                svc.persist_rules()
        return {
            "accepted": len(req.entries) - len(unknown),
            "unknown": unknown,
            "events": [ev.to_json() for ev in emitted],
        }

    # -- event stream ------------------------------------------------------------------

    @app.get("/events")
    async def events(request: Request) -> StreamingResponse:
        queue: asyncio.Queue = asyncio.Queue()
        svc.subscribers.append(queue)

        async def stream() -> Any:
            try:
                yield ": connected\n\n"
                while True:
                    if await request.is_disconnected():
                        break
                    try:
                        event = await asyncio.wait_for(queue.get(), timeout=1.0)
                    except asyncio.TimeoutError:
                        yield ": keepalive\n\n"
                        continue
                    yield f"data: {json.dumps(event.to_json())}\n\n"
            finally:
                svc.subscribers.remove(queue)

        return StreamingResponse(stream(), media_type="text/event-stream")

    return app


def load_service(
    bundle_dir: str | Path,
    data_path: str | Path | None = None,
    audit_log: str | Path | None = None,
    action_log: str | Path | None = None,
) -> FastAPI:
    """Build the app from a persisted bundle directory."""
    from .pipeline import load_bundle

    bundle = load_bundle(bundle_dir)
    dataset = None
    path = data_path or bundle.config.storage.data_path
    if path and Path(path).exists():
        dataset = Dataset.from_csv(path, schema=bundle.config.schema)
    audit = audit_log or Path(bundle_dir) / bundle.config.storage.audit_log
    actions = action_log or Path(bundle_dir) / bundle.config.storage.action_log
    return create_app(
        bundle,
        dataset=dataset,
        audit_log=audit,
        action_log=actions,
        rules_path=Path(bundle_dir) / "rules.json",
    )
