"""Pipeline configuration: one JSON document wiring every stage together."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path
from typing import Mapping

from .collation import CollationConfig, CollationMode
from .engine import AppraisalConfig, ClassifyConfig
from .model import DEFAULT_ALARM, ContextLevel, FieldSchema, Response
from .references import DriftConfig, Measure, MeasureSpec


class ConfigError(Exception):
    pass


_DURATION_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(s|m|h|d)?\s*$")
_UNIT_SECONDS = {"s": 1, "m": 60, "h": 3600, "d": 86400, None: 1}


def parse_duration(value: str | int | float) -> timedelta:
    """Accept '15m', '30d', '90s', '2h' or a plain number of seconds."""
    if isinstance(value, (int, float)):
        return timedelta(seconds=float(value))
    m = _DURATION_RE.match(value)
    if not m:
        raise ConfigError(f"cannot parse duration {value!r} (want e.g. '15m', '1d', 900)")
    return timedelta(seconds=float(m.group(1)) * _UNIT_SECONDS[m.group(2)])


def format_duration(td: timedelta) -> str:
    seconds = td.total_seconds()
    for unit, size in (("d", 86400), ("h", 3600), ("m", 60)):
        if seconds % size == 0 and seconds >= size:
            return f"{int(seconds // size)}{unit}"
    return f"{seconds:g}s"


@dataclass(frozen=True)
class DetectorConfig:
    kind: str = "builtin"  # builtin | external
    z: float = 5.0
    index_path: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("builtin", "external"):
            raise ConfigError(f"detector kind must be builtin or external, got {self.kind!r}")
        if self.kind == "builtin" and self.z <= 0:
            raise ConfigError("builtin detector needs z > 0")
        if self.kind == "external" and not self.index_path:
            raise ConfigError("external detector needs index_path")


@dataclass(frozen=True)
class StorageConfig:
    data_path: str | None = None
    audit_log: str = "audit.jsonl"
    action_log: str = "actions.jsonl"


@dataclass(frozen=True)
class PipelineConfig:
    schema: FieldSchema
    interval: timedelta = timedelta(minutes=15)
    level: ContextLevel = ContextLevel.CELL_KPI
    measure: MeasureSpec = MeasureSpec()
    drift: DriftConfig = DriftConfig()
    collation: CollationConfig = CollationConfig()
    classify_opts: Mapping = field(default_factory=dict)  # ratio_epsilon, missing_ref_error
    appraisal: AppraisalConfig = AppraisalConfig()
    detector: DetectorConfig = DetectorConfig()
    storage: StorageConfig = StorageConfig()

    @property
    def classify(self) -> ClassifyConfig:
        return ClassifyConfig(schema=self.schema, **dict(self.classify_opts))

    def to_json(self) -> dict:
        return {
            "interval": format_duration(self.interval),
            "fields": self.schema.to_json(),
            "reference": {
                "level": self.level.value,
                "measure": self.measure.kind.value,
                "mode_digits": self.measure.mode_digits,
            },
            "drift": {
                "window_length": format_duration(self.drift.window_length),
                "update_period": format_duration(self.drift.update_period),
                "exclude_outliers": self.drift.exclude_outliers,
            },
            "collation": {
                "min_interval": format_duration(self.collation.min_interval),
                "mode": self.collation.mode.value,
            },
            "classify": dict(self.classify_opts),
            "appraisal": {
                "f_c": self.appraisal.f_c,
                "default_response": self.appraisal.default_response.to_json(),
            },
            "detector": {
                "kind": self.detector.kind,
                "z": self.detector.z,
                "index_path": self.detector.index_path,
            },
            "storage": {
                "data_path": self.storage.data_path,
                "audit_log": self.storage.audit_log,
                "action_log": self.storage.action_log,
            },
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"

    @classmethod
    def from_json(cls, data: Mapping) -> "PipelineConfig":
        try:
            schema = FieldSchema.from_json(data["fields"])
        except KeyError:
            raise ConfigError("config needs a 'fields' list") from None
        ref = data.get("reference", {})
        drift = data.get("drift", {})
        coll = data.get("collation", {})
        appr = data.get("appraisal", {})
        det = data.get("detector", {})
        storage = data.get("storage", {})
        return cls(
            schema=schema,
            interval=parse_duration(data.get("interval", "15m")),
            level=ContextLevel(ref.get("level", "cell_kpi")),
            measure=MeasureSpec(
                kind=Measure(ref.get("measure", "median")),
                mode_digits=int(ref.get("mode_digits", 3)),
            ),
            drift=DriftConfig(
                window_length=parse_duration(drift.get("window_length", "30d")),
                update_period=parse_duration(drift.get("update_period", "1d")),
                exclude_outliers=bool(drift.get("exclude_outliers", True)),
            ),
            collation=CollationConfig(
                min_interval=parse_duration(coll.get("min_interval", "15m")),
                mode=CollationMode(coll.get("mode", "delayed")),
            ),
            classify_opts=dict(data.get("classify", {})),
            appraisal=AppraisalConfig(
                f_c=appr.get("f_c"),
                default_response=(
                    Response.from_json(appr["default_response"])
                    if appr.get("default_response")
                    else DEFAULT_ALARM
                ),
            ),
            detector=DetectorConfig(
                kind=det.get("kind", "builtin"),
                z=float(det.get("z", 5.0)),
                index_path=det.get("index_path"),
            ),
            storage=StorageConfig(
                data_path=storage.get("data_path"),
                audit_log=storage.get("audit_log", "audit.jsonl"),
                action_log=storage.get("action_log", "actions.jsonl"),
            ),
        )

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_json(data)
