"""Operator entry points: generate data, train, inspect/export rules, serve, replay.

Exit codes: 0 success, 1 runtime failure, 2 invalid input, 3 not found.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click

from .collation import CollationMode
from .config import ConfigError, PipelineConfig
from .dataset import Dataset, DatasetError
from .detector import OutlierIndexError
from .model import RuleSet, RuleSetError
from .pipeline import StageError, load_bundle, replay, save_bundle, train
from .synth import PlacementError, generate, load_scenario, write_ground_truth

EXIT_RUNTIME = 1
EXIT_INVALID = 2
EXIT_NOT_FOUND = 3


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
def main() -> None:
    """Rule mining and appraisal for multivariate KPI anomaly feeds."""


@main.command("generate")
@click.option("--spec", "spec_path", required=True, type=click.Path(), help="Scenario JSON file.")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory.")
def cmd_generate(spec_path: str, out_dir: str) -> None:
    """Generate a synthetic KPI dataset plus its injection ground truth."""
    try:
        spec = load_scenario(spec_path)
    except FileNotFoundError:
        _fail(EXIT_NOT_FOUND, f"scenario file not found: {spec_path}")
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        _fail(EXIT_INVALID, f"bad scenario file: {exc}")
    try:
        dataset, truth = generate(spec)
    except PlacementError as exc:
        _fail(EXIT_INVALID, str(exc))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset.to_csv(out / "dataset.csv")
    write_ground_truth(truth, out / "ground_truth.csv")
    click.echo(
        f"wrote {len(dataset)} records over {spec.n_cells} cells / {spec.n_kpis} KPIs "
        f"and {len(truth)} injected occurrences to {out}"
    )


@main.command("train")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--data", "data_path", required=True, type=click.Path())
@click.option("--outliers", "outliers_path", type=click.Path(), default=None,
              help="External outlier index CSV; skips the builtin detector.")
@click.option("--out", "out_dir", required=True, type=click.Path())
def cmd_train(config_path: str, data_path: str, outliers_path: str | None, out_dir: str) -> None:
    """Run the training phase and persist the bundle directory."""
    try:
        config = PipelineConfig.load(config_path)
    except FileNotFoundError:
        _fail(EXIT_NOT_FOUND, f"config not found: {config_path}")
    except ConfigError as exc:
        _fail(EXIT_INVALID, str(exc))
    if outliers_path is not None:
        from dataclasses import replace

        from .config import DetectorConfig

        config = replace(config, detector=DetectorConfig(kind="external", index_path=outliers_path))
    try:
        dataset = Dataset.from_csv(data_path, schema=config.schema, interval=config.interval)
    except FileNotFoundError:
        _fail(EXIT_NOT_FOUND, f"dataset not found: {data_path}")
    except DatasetError as exc:
        _fail(EXIT_INVALID, str(exc))
    try:
        bundle = train(dataset, config)
    except StageError as exc:
        if isinstance(exc.cause, FileNotFoundError):
            _fail(EXIT_NOT_FOUND, str(exc))
        if isinstance(exc.cause, (OutlierIndexError, ConfigError, DatasetError)):
            _fail(EXIT_INVALID, str(exc))
        _fail(EXIT_RUNTIME, str(exc))
    save_bundle(bundle, out_dir)
    d = bundle.diagnostics
    click.echo(
        f"trained: {d['flagged_records']} flagged records -> {d['occurrences']} occurrences "
        f"-> {d['rules']} unappraised rules; bundle at {out_dir}"
    )


def _load_rules(bundle_dir: str) -> RuleSet:
    path = Path(bundle_dir) / "rules.json"
    if not path.exists():
        _fail(EXIT_NOT_FOUND, f"no rules.json under {bundle_dir}")
    return RuleSet.loads(path.read_text())


@main.group("rules")
def cmd_rules() -> None:
    """Inspect and export the rule set of a bundle."""


@cmd_rules.command("list")
@click.option("--bundle", "bundle_dir", required=True, type=click.Path())
@click.option("--status", type=str, default=None)
def cmd_rules_list(bundle_dir: str, status: str | None) -> None:
    """List rules sorted by count descending (same order the service uses)."""
    ruleset = _load_rules(bundle_dir)
    rules = ruleset.all_rules()
    if status:
        rules = [r for r in rules if r.status.value == status]
    rules.sort(key=lambda r: (-r.count, r.rule_id))
    for r in rules:
        glyphs = " ".join(c.glyph for c in r.conditions)
        ext = " " + ",".join(e.encode() for e in r.extended) if r.extended else ""
        click.echo(f"{r.rule_id}  [{glyphs}]{ext}  count={r.count}  {r.status.value}")


@cmd_rules.command("show")
@click.option("--bundle", "bundle_dir", required=True, type=click.Path())
@click.argument("rule_id")
def cmd_rules_show(bundle_dir: str, rule_id: str) -> None:
    """Print one rule as JSON."""
    ruleset = _load_rules(bundle_dir)
    try:
        rule = ruleset.find(rule_id)
    except RuleSetError:
        _fail(EXIT_NOT_FOUND, f"rule not found: {rule_id}")
    click.echo(json.dumps(rule.to_json(), indent=2))


@cmd_rules.command("export")
@click.option("--bundle", "bundle_dir", required=True, type=click.Path())
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv")
@click.option("--out", "out_path", type=click.Path(), default=None, help="Default: stdout.")
def cmd_rules_export(bundle_dir: str, fmt: str, out_path: str | None) -> None:
    """Export the rule set as a spreadsheet-style CSV or as JSON."""
    ruleset = _load_rules(bundle_dir)
    if fmt == "json":
        text = ruleset.dumps()
    else:
        text = export_rules_csv(ruleset)
    if out_path:
        Path(out_path).write_text(text)
        click.echo(f"wrote {out_path}")
    else:
        click.echo(text, nl=False)


def export_rules_csv(ruleset: RuleSet) -> str:
    """One row per rule: condition glyphs per field, count, status, severity."""
    import io

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["rule_id"]
        + list(ruleset.schema.names)
        + ["extended", "count", "status", "severity", "response_kind"]
    )
    for r in sorted(ruleset.all_rules(), key=lambda r: (-r.count, r.rule_id)):
        writer.writerow(
            [r.rule_id]
            + [c.glyph for c in r.conditions]
            + [
                ";".join(e.encode() for e in r.extended),
                r.count,
                r.status.value,
                r.response.severity.value if r.response.severity else "",
                r.response.kind.value,
            ]
        )
    return buf.getvalue()


@main.command("serve")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Optional override; defaults to the bundle's embedded config.")
@click.option("--bundle", "bundle_dir", required=True, type=click.Path())
@click.option("--data", "data_path", type=click.Path(), default=None,
              help="Dataset CSV for anomaly series plots.")
@click.option("--port", type=int, default=8765)
@click.option("--host", type=str, default="127.0.0.1")
def cmd_serve(config_path: str | None, bundle_dir: str, data_path: str | None,
              port: int, host: str) -> None:
    """Serve the appraisal API and event stream on the given port."""
    import uvicorn

    from .service import load_service

    if not Path(bundle_dir).is_dir():
        _fail(EXIT_NOT_FOUND, f"bundle directory not found: {bundle_dir}")
    try:
        app = load_service(bundle_dir, data_path=data_path)
    except (ConfigError, RuleSetError, FileNotFoundError) as exc:
        _fail(EXIT_INVALID, f"cannot load bundle: {exc}")
    if config_path:
        # Service-level knobs only; the engine params stay pinned to the bundle.
        try:
            PipelineConfig.load(config_path)
        except ConfigError as exc:
            _fail(EXIT_INVALID, str(exc))
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except SystemExit as exc:
        if exc.code:  # startup failure (e.g. port already bound)
            _fail(EXIT_RUNTIME, f"server failed to start on {host}:{port}")
    except OSError as exc:
        _fail(EXIT_RUNTIME, f"cannot bind {host}:{port}: {exc}")


@main.command("replay")
@click.option("--bundle", "bundle_dir", required=True, type=click.Path())
@click.option("--data", "data_path", required=True, type=click.Path())
@click.option("--mode", type=click.Choice(["delayed", "eager"]), default=None,
              help="Override the bundle's collation mode.")
@click.option("--speed", type=float, default=0.0,
              help="Realtime factor; 0 replays as fast as possible.")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Event log JSONL; default stdout.")
def cmd_replay(bundle_dir: str, data_path: str, mode: str | None, speed: float,
               out_path: str | None) -> None:
    """Stream a dataset through the application phase, logging one event per line."""
    import time

    try:
        bundle = load_bundle(bundle_dir)
    except FileNotFoundError as exc:
        _fail(EXIT_NOT_FOUND, str(exc))
    try:
        dataset = Dataset.from_csv(data_path, schema=bundle.config.schema)
    except FileNotFoundError:
        _fail(EXIT_NOT_FOUND, f"dataset not found: {data_path}")
    except DatasetError as exc:
        _fail(EXIT_INVALID, str(exc))

    sink = Path(out_path).open("w") if out_path else sys.stdout
    wall_start = time.monotonic()
    data_start = min(dataset.timestamps) if len(dataset) else None

    def on_event(event) -> None:
        if speed > 0 and data_start is not None:
            lag = (event.emitted_at - data_start).total_seconds() / speed
            wait = lag - (time.monotonic() - wall_start)
            if wait > 0:
                time.sleep(wait)
        sink.write(json.dumps(event.to_json()) + "\n")

    try:
        state, events = replay(dataset, bundle,
                               mode=CollationMode(mode) if mode else None,
                               on_event=on_event)
    finally:
        if out_path:
            sink.close()
    discoveries = sum(1 for e in events if e.matched_rule_id is None)
    click.echo(
        f"replayed {len(dataset)} records: {len(events)} events, "
        f"{discoveries} discovery events, "
        f"{len(state.ruleset.unappraised)} unappraised rules",
        err=True,
    )


if __name__ == "__main__":
    main()
