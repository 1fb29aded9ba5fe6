"""HTTP API: rule listing/appraisal, anomaly browsing, ingestion, event stream."""

from __future__ import annotations

import json
import threading
import time

import httpx
import pytest
from fastapi.testclient import TestClient

from rulemine.config import PipelineConfig
from rulemine.pipeline import train
from rulemine.service import create_app
from rulemine.synth import (
    Direction,
    InjectedPattern,
    KpiBaseline,
    MagnitudeKind,
    ScenarioSpec,
    generate,
)

UP, DOWN, FLAT = Direction.UP, Direction.DOWN, Direction.FLAT


def build_service(tmp_path, collation_mode="delayed"):
    spec = ScenarioSpec(
        n_cells=4,
        n_regions=2,
        n_kpis=3,
        days=3,
        seed=21,
        baselines=tuple(KpiBaseline(level=100.0 * (i + 1), noise_std=0.0) for i in range(3)),
        patterns=(
            InjectedPattern("p1", (UP, DOWN, DOWN), magnitude=3.0,
                            magnitude_kind=MagnitudeKind.RATIO, duration=3, occurrences=5),
            InjectedPattern("p2", (UP, UP, UP), magnitude=3.0,
                            magnitude_kind=MagnitudeKind.RATIO, duration=2, occurrences=3),
        ),
    )
    ds, truth = generate(spec)
    config = PipelineConfig.from_json({
        "fields": [{"name": n, "theta": 100.0 * (i + 1)} for i, n in enumerate(ds.schema.names)],
        "detector": {"kind": "builtin", "z": 5.0},
        "collation": {"min_interval": "15m", "mode": collation_mode},
    })
    bundle = train(ds, config)
    app = create_app(
        bundle,
        dataset=ds,
        audit_log=tmp_path / "audit.jsonl",
        action_log=tmp_path / "actions.jsonl",
    )
    return app, bundle, ds, truth


@pytest.fixture()
def client(tmp_path):
    app, bundle, ds, truth = build_service(tmp_path)
    with TestClient(app) as c:
        c.bundle = bundle
        c.ds = ds
        c.tmp_path = tmp_path
        yield c


def test_healthz(client):
    body = client.get("/healthz").json()
    assert body["status"] == "ok"
    assert body["rules"] == 2


def test_rules_listing_sorted_by_count_desc(client):
    body = client.get("/rules", params={"status": "unappraised"}).json()
    counts = [r["count"] for r in body["rules"]]
    assert counts == sorted(counts, reverse=True)
    assert counts == [5, 3]
    assert body["fields"] == ["kpi1", "kpi2", "kpi3"]


def test_rules_unknown_status_rejected(client):
    assert client.get("/rules", params={"status": "bogus"}).status_code == 422


def test_get_rule_by_id_and_404(client):
    listed = client.get("/rules").json()["rules"]
    rule = client.get(f"/rules/{listed[0]['id']}").json()
    assert rule == listed[0]
    assert client.get("/rules/nope").status_code == 404


def test_whitelist_round_trip(client):
    rules = client.get("/rules").json()["rules"]
    top = rules[0]
    out = client.post(f"/rules/{top['id']}/appraise", json={"action": "whitelist"})
    assert out.status_code == 200
    wl = [r for r in out.json()["rules"] if r["id"] == top["id"]]
    assert wl and wl[0]["status"] == "whitelisted"
    assert wl[0]["response"]["kind"] == "null"
    # Second whitelist on the same id conflicts.
    again = client.post(f"/rules/{top['id']}/appraise", json={"action": "whitelist"})
    assert again.status_code == 409
    # Audit log captured both the action and the failed attempt is absent.
    audit_lines = (client.tmp_path / "audit.jsonl").read_text().strip().splitlines()
    assert len(audit_lines) == 1
    entry = json.loads(audit_lines[0])
    assert entry["action"] == "whitelist"
    assert entry["rule_id"] == top["id"]


def test_assign_with_extended_condition(client):
    rules = client.get("/rules").json()["rules"]
    rid = rules[1]["id"]
    out = client.post(f"/rules/{rid}/appraise", json={
        "action": "assign",
        "response": {"kind": "custom", "severity": "critical", "actions": ["open_ticket"]},
        "extended": [{"type": "duration", "op": ">", "k": 1}],
    })
    assert out.status_code == 200
    moved = [r for r in out.json()["rules"] if r["status"] == "appraised"]
    assert len(moved) == 1
    assert moved[0]["response"]["severity"] == "critical"
    assert moved[0]["extended"] == [{"type": "duration", "op": ">", "k": 1}]
    # Recount happened: duration>1 keeps only multi-interval occurrences.
    assert moved[0]["count"] >= 1


def test_split_returns_children(client):
    rules = client.get("/rules").json()["rules"]
    rid = rules[0]["id"]
    out = client.post(f"/rules/{rid}/appraise", json={
        "action": "split", "masks": [[0], [1, 2]],
    })
    assert out.status_code == 200
    children = [r for r in out.json()["rules"] if r["status"] == "unappraised"]
    conditions = {tuple(r["conditions"]) for r in children}
    assert ("+", "x", "x") in conditions
    assert ("x", "-", "-") in conditions
    # Counts were recomputed: [+,x,x] matches both training patterns.
    plus_any = next(r for r in children if tuple(r["conditions"]) == ("+", "x", "x"))
    assert plus_any["count"] == 8


def test_combine_into_appraised_target(client):
    rules = client.get("/rules").json()["rules"]
    target, source = rules[0], rules[1]
    client.post(f"/rules/{target['id']}/appraise", json={
        "action": "assign", "response": {"kind": "custom", "severity": "major"},
    })
    out = client.post(f"/rules/{source['id']}/appraise", json={
        "action": "combine", "target_rule_id": target["id"],
    })
    assert out.status_code == 200
    merged = [r for r in out.json()["rules"] if r["status"] == "appraised"]
    assert len(merged) == 1
    # Differing positions became don't-care; shared leading '+' kept.
    assert merged[0]["conditions"][0] == "+"
    assert "x" in merged[0]["conditions"]
    assert merged[0]["count"] == 8


def test_appraise_validation_errors(client):
    rules = client.get("/rules").json()["rules"]
    rid = rules[0]["id"]
    assert client.post(f"/rules/{rid}/appraise", json={"action": "assign"}).status_code == 422
    assert client.post(f"/rules/{rid}/appraise", json={"action": "split"}).status_code == 422
    assert client.post(f"/rules/{rid}/appraise", json={"action": "nope"}).status_code == 422
    assert client.post("/rules/missing/appraise", json={"action": "whitelist"}).status_code == 404


def test_anomalies_listing_and_rule_filter(client):
    body = client.get("/anomalies", params={"page_size": 100}).json()
    assert body["total"] == 8  # 5 + 3 training occurrences
    rules = client.get("/rules").json()["rules"]
    top = rules[0]
    filtered = client.get("/anomalies", params={"rule_id": top["id"], "page_size": 100}).json()
    assert filtered["total"] == top["count"] == 5
    for item in filtered["items"]:
        assert item["matched_rule_id"] == top["id"]


def test_anomalies_pagination_and_time_filter(client):
    page1 = client.get("/anomalies", params={"page": 1, "page_size": 3}).json()
    page2 = client.get("/anomalies", params={"page": 2, "page_size": 3}).json()
    assert len(page1["items"]) == 3
    assert page1["total"] == 8
    ids1 = {i["event_id"] for i in page1["items"]}
    ids2 = {i["event_id"] for i in page2["items"]}
    assert not ids1 & ids2

    t0 = page1["items"][0]
    narrowed = client.get("/anomalies", params={"from": t0["t_start"], "to": t0["t_end"]}).json()
    assert narrowed["total"] >= 1


def test_anomaly_series_window(client):
    item = client.get("/anomalies").json()["items"][0]
    body = client.get(f"/anomalies/{item['event_id']}/series", params={"pad": 4}).json()
    assert body["event"]["event_id"] == item["event_id"]
    assert len(body["series"]) == 3
    for s in body["series"]:
        assert s["ref"] is not None
        ts_list = [p["t"] for p in s["points"]]
        assert item["t_start"] in ts_list
        # Window spans [t_start - pad, t_end + pad] where data exists.
        assert len(ts_list) >= item["duration"]
    assert client.get("/anomalies/evmissing/series").status_code == 404


def test_ingest_unseen_pattern_discovers_and_streams(client):
    base = "2025-01-10T00:{m:02d}:00Z"
    records = [
        {"timestamp": base.format(m=0), "cell_id": "cell001", "region_id": "region01",
         "values": [900.0, 200.0, 300.0]},
        {"timestamp": base.format(m=15), "cell_id": "cell001", "region_id": "region01",
         "values": [900.0, 200.0, 300.0]},
        {"timestamp": "2025-01-10T02:00:00Z", "cell_id": "cell001", "region_id": "region01",
         "values": [100.0, 200.0, 300.0]},
    ]
    out = client.post("/ingest", json={"records": records})
    assert out.status_code == 200
    events = out.json()["events"]
    assert len(events) == 1
    (event,) = events
    assert event["vector"] == ["+", "0", "0"]
    assert event["matched_rule_id"] is None
    assert event["duration"] == 2
    # The discovery landed in the unappraised queue.
    rules = client.get("/rules", params={"status": "unappraised"}).json()["rules"]
    assert any(tuple(r["conditions"]) == ("+", "0", "0") for r in rules)
    # Default action recorded once for the group.
    actions = (client.tmp_path / "actions.jsonl").read_text().strip().splitlines()
    assert len(actions) == 1
    assert json.loads(actions[0])["event_id"] == event["event_id"]


def test_ingest_matching_whitelisted_rule_takes_no_action(client):
    rules = client.get("/rules").json()["rules"]
    top = rules[0]
    client.post(f"/rules/{top['id']}/appraise", json={"action": "whitelist"})
    # Craft records reproducing the [+,-,-] pattern for a known cell
    # (thetas are 100/200/300, refs sit near 100/200/300).
    records = [
        {"timestamp": "2025-01-11T00:00:00Z", "cell_id": "cell002", "region_id": "region01",
         "values": [900.0, -150.0, -150.0]},
        {"timestamp": "2025-01-11T03:00:00Z", "cell_id": "cell002", "region_id": "region01",
         "values": [100.0, 200.0, 300.0]},
    ]
    out = client.post("/ingest", json={"records": records}).json()
    (event,) = out["events"]
    assert event["matched_rule_id"] == top["id"]
    assert event["response_taken"]["kind"] == "null"
    actions_file = client.tmp_path / "actions.jsonl"
    assert not actions_file.exists() or actions_file.read_text().strip() == ""


def test_external_outlier_flags(client):
    records = [
        {"timestamp": "2025-01-12T00:00:00Z", "cell_id": "cell003", "region_id": "region02",
         "values": [100.0, 200.0, 300.0]},
    ]
    client.post("/ingest", json={"records": records})
    out = client.post("/outliers", json={"entries": [
        {"cell_id": "cell003", "timestamp": "2025-01-12T00:00:00Z"},
        {"cell_id": "cell003", "timestamp": "2025-01-12T09:00:00Z"},
    ]})
    body = out.json()
    assert body["accepted"] == 1
    assert body["unknown"] == ["cell003@2025-01-12T09:00:00Z"]
    # The flagged record forms an eventual occurrence: close by ingesting a late record.
    later = [{"timestamp": "2025-01-12T06:00:00Z", "cell_id": "cell003",
              "region_id": "region02", "values": [100.0, 200.0, 300.0]}]
    events = client.post("/ingest", json={"records": later}).json()["events"]
    assert len(events) == 1
    assert events[0]["vector"] == ["0", "0", "0"]


def test_eager_mode_supersedes_and_fires_default_action_once(tmp_path):
    app, bundle, ds, truth = build_service(tmp_path, collation_mode="eager")
    with TestClient(app) as client:
        records = [
            {"timestamp": "2025-01-10T00:00:00Z", "cell_id": "cell001", "region_id": "region01",
             "values": [900.0, 200.0, 300.0]},
            {"timestamp": "2025-01-10T00:15:00Z", "cell_id": "cell001", "region_id": "region01",
             "values": [900.0, 200.0, 300.0]},
        ]
        events = client.post("/ingest", json={"records": records}).json()["events"]
        assert len(events) == 2  # one snapshot per outlier
        assert events[1]["supersedes"] == events[0]["event_id"]
        assert events[0]["group_id"] == events[1]["group_id"]
        assert [e["duration"] for e in events] == [1, 2]
        # Default action fired once for the group, not per snapshot.
        actions = (tmp_path / "actions.jsonl").read_text().strip().splitlines()
        assert len(actions) == 1
        # Discovery counted the group once.
        rules = client.get("/rules", params={"status": "unappraised"}).json()["rules"]
        discovered = [r for r in rules if tuple(r["conditions"]) == ("+", "0", "0")]
        assert discovered and discovered[0]["count"] == 1


def test_record_width_validation(client):
    records = [{"timestamp": "2025-01-10T00:00:00Z", "cell_id": "c", "region_id": "r",
                "values": [1.0]}]
    assert client.post("/ingest", json={"records": records}).status_code == 422


def test_ingesting_training_stream_matches_pipeline_replay(tmp_path):
    """Pushing the full training dataset through /ingest reproduces the
    pipeline's delayed-replay behavior: one event per training occurrence, all
    discoveries incrementing the existing unappraised rules."""
    app, bundle, ds, truth = build_service(tmp_path)
    order = sorted(range(len(ds)), key=lambda i: (ds.timestamps[i], ds.cell_ids[i]))
    records = []
    for i in order:
        rec = ds.record(i)
        records.append({
            "timestamp": rec.timestamp.strftime("%Y-%m-%dT%H:%M:%SZ"),
            "cell_id": rec.cell_id,
            "region_id": rec.region_id,
            "values": list(rec.values),
        })
    with TestClient(app) as client:
        events = []
        batch = 2000
        for lo in range(0, len(records), batch):
            out = client.post("/ingest", json={"records": records[lo : lo + batch]})
            assert out.status_code == 200
            events.extend(out.json()["events"])
        # Tail groups close on the next far-future record per cell.
        tail = [
            {"timestamp": "2025-02-01T00:00:00Z", "cell_id": c, "region_id": "region01",
             "values": [100.0, 200.0, 300.0]}
            for c in sorted(set(ds.cell_ids))
        ]
        events.extend(client.post("/ingest", json={"records": tail}).json()["events"])

        assert len(events) == len(truth) == 8
        assert all(e["matched_rule_id"] is None for e in events)  # nothing appraised yet
        rules = client.get("/rules", params={"status": "unappraised"}).json()["rules"]
        # Each training occurrence re-discovered its own rule: counts doubled.
        assert sorted(r["count"] for r in rules) == [6, 10]


def test_appraisals_and_discoveries_survive_restart(tmp_path):
    from rulemine.pipeline import save_bundle
    from rulemine.service import load_service

    app, bundle, ds, truth = build_service(tmp_path)
    bundle_dir = tmp_path / "bundle"
    save_bundle(bundle, bundle_dir)
    data_path = tmp_path / "data.csv"
    ds.to_csv(data_path)

    app = load_service(bundle_dir, data_path=data_path)
    with TestClient(app) as client:
        top = client.get("/rules").json()["rules"][0]
        client.post(f"/rules/{top['id']}/appraise", json={"action": "whitelist"})
        records = [
            {"timestamp": "2025-01-10T00:00:00Z", "cell_id": "cell001", "region_id": "region01",
             "values": [900.0, 200.0, 300.0]},
            {"timestamp": "2025-01-10T02:00:00Z", "cell_id": "cell001", "region_id": "region01",
             "values": [100.0, 200.0, 300.0]},
        ]
        assert len(client.post("/ingest", json={"records": records}).json()["events"]) == 1

    # A fresh service over the same bundle sees the whitelist and the discovery.
    reborn = load_service(bundle_dir, data_path=data_path)
    with TestClient(reborn) as client:
        rules = client.get("/rules").json()["rules"]
        assert any(r["id"] == top["id"] and r["status"] == "whitelisted" for r in rules)
        assert any(
            tuple(r["conditions"]) == ("+", "0", "0") and r["status"] == "unappraised"
            for r in rules
        )


def test_event_stream_delivers_ingested_events(tmp_path):
    import uvicorn

    app, bundle, ds, truth = build_service(tmp_path)
    config = uvicorn.Config(app, host="127.0.0.1", port=8941, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            pytest.fail("server did not start")
        time.sleep(0.05)
    try:
        received = []

        def listen():
            with httpx.Client(timeout=10) as c:
                with c.stream("GET", "http://127.0.0.1:8941/events") as resp:
                    for line in resp.iter_lines():
                        if line.startswith("data: "):
                            received.append(json.loads(line[len("data: "):]))
                            return

        listener = threading.Thread(target=listen, daemon=True)
        listener.start()
        time.sleep(0.3)
        records = [
            {"timestamp": "2025-01-10T00:00:00Z", "cell_id": "cell001",
             "region_id": "region01", "values": [900.0, 200.0, 300.0]},
            {"timestamp": "2025-01-10T03:00:00Z", "cell_id": "cell001",
             "region_id": "region01", "values": [100.0, 200.0, 300.0]},
        ]
        with httpx.Client(timeout=10) as c:
            out = c.post("http://127.0.0.1:8941/ingest", json={"records": records})
            assert out.status_code == 200
            assert len(out.json()["events"]) == 1
        listener.join(timeout=10)
        assert received and received[0]["vector"] == ["+", "0", "0"]
    finally:
        server.should_exit = True
        thread.join(timeout=10)
