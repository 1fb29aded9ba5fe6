"""Shared vocabulary types: conditions, rules, rule sets and their canonical encodings.

Everything here is an immutable value object; mutation happens by building
replacements (``dataclasses.replace``), so instances are safe to share between
concurrent readers.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Iterator, Mapping, Sequence, Union

SCHEMA_VERSION = 1

# Separators of the canonical rule key. These are an implementation constant:
# the contract is stability, not the particular characters.
_COND_SEP = ","
_EXT_SEP = "|"


class Condition(Enum):
    """Per-field classification of an observed value against its reference."""

    GT = "+"
    LT = "-"
    APPROX = "0"
    DONT_CARE = "x"

    @property
    def glyph(self) -> str:
        return self.value

    @classmethod
    def from_glyph(cls, glyph: str) -> "Condition":
        try:
            return cls(glyph)
        except ValueError:
            raise ValueError(f"unknown condition glyph {glyph!r}") from None


class Scale(Enum):
    LINEAR = "linear"
    EXPONENTIAL = "exponential"


class Agg(Enum):
    MEAN = "mean"
    MAX = "max"
    MIN = "min"


class ResponseKind(Enum):
    NULL = "null"
    DEFAULT_ALARM = "default_alarm"
    CUSTOM = "custom"


class Severity(Enum):
    INFO = "info"
    MINOR = "minor"
    MAJOR = "major"
    CRITICAL = "critical"


class RuleStatus(Enum):
    UNAPPRAISED = "unappraised"
    APPRAISED = "appraised"
    WHITELISTED = "whitelisted"


class ContextLevel(Enum):
    KPI = "kpi"
    CELL_KPI = "cell_kpi"
    REGION_KPI = "region_kpi"


# ---------------------------------------------------------------------------
# Timestamps
# ---------------------------------------------------------------------------


def parse_ts(text: str) -> datetime:
    """Parse an ISO-8601 UTC timestamp ('Z' suffix or explicit offset)."""
    raw = text.strip()
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    dt = datetime.fromisoformat(raw)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def fmt_ts(dt: datetime) -> str:
    """Format a UTC timestamp as compact ISO-8601 with a 'Z' suffix."""
    dt = dt.astimezone(timezone.utc)
    if dt.microsecond:
        return dt.strftime("%Y-%m-%dT%H:%M:%S.%f") + "Z"
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def utcnow() -> datetime:
    """Current UTC time truncated to whole seconds (keeps timestamps byte-stable)."""
    return datetime.now(timezone.utc).replace(microsecond=0)


# ---------------------------------------------------------------------------
# Field schema and records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldSpec:
    """One KPI column: how it scales, aggregates, and what deviation is significant."""

    name: str
    scale: Scale = Scale.LINEAR
    agg: Agg = Agg.MEAN
    theta: float = 1.0

    def __post_init__(self) -> None:
        if self.theta <= 0:
            raise ValueError(f"field {self.name!r}: theta must be > 0, got {self.theta}")
        if self.scale is Scale.EXPONENTIAL and self.theta <= 1:
            raise ValueError(f"field {self.name!r}: ratio threshold must be > 1, got {self.theta}")


@dataclass(frozen=True)
class FieldSchema:
    """Ordered KPI field list; the single source of condition-vector ordering."""

    fields: tuple[FieldSpec, ...]

    def __post_init__(self) -> None:
        if not self.fields:
            raise ValueError("schema needs at least one field")
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate field names in schema: {names}")

    def __len__(self) -> int:
        return len(self.fields)

    def __iter__(self) -> Iterator[FieldSpec]:
        return iter(self.fields)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def to_json(self) -> list[dict]:
        return [
            {"name": f.name, "scale": f.scale.value, "agg": f.agg.value, "theta": f.theta}
            for f in self.fields
        ]

    @classmethod
    def from_json(cls, data: Sequence[Mapping]) -> "FieldSchema":
        return cls(
            tuple(
                FieldSpec(
                    name=d["name"],
                    scale=Scale(d.get("scale", "linear")),
                    agg=Agg(d.get("agg", "mean")),
                    theta=float(d.get("theta", 1.0)),
                )
                for d in data
            )
        )


MISSING = float("nan")


def is_missing(value: float) -> bool:
    return math.isnan(value)


@dataclass(frozen=True)
class KpiRecord:
    """One timestamped multivariate KPI row. Missing values are NaN."""

    timestamp: datetime
    cell_id: str
    region_id: str
    values: tuple[float, ...]


@dataclass(frozen=True)
class Context:
    """A set of comparable circumstances: level, key parts, and a time window."""

    level: ContextLevel
    kpi_name: str
    cell_id: str | None = None
    region_id: str | None = None
    window: tuple[datetime, datetime] | None = None

    def __post_init__(self) -> None:
        if self.level is ContextLevel.CELL_KPI and not self.cell_id:
            raise ValueError("cell_kpi context requires cell_id")
        if self.level is ContextLevel.REGION_KPI and not self.region_id:
            raise ValueError("region_kpi context requires region_id")
        if self.window is not None and self.window[0] >= self.window[1]:
            raise ValueError("context window start must precede end")

    @property
    def key(self) -> tuple[str, ...]:
        return context_key(self.level, self.kpi_name, self.cell_id, self.region_id)


def context_key(
    level: ContextLevel, kpi_name: str, cell_id: str | None = None, region_id: str | None = None
) -> tuple[str, ...]:
    """Bucket key for a context at the given level."""
    if level is ContextLevel.KPI:
        return (kpi_name,)
    if level is ContextLevel.CELL_KPI:
        if cell_id is None:
            raise ValueError("cell_kpi key requires cell_id")
        return (kpi_name, cell_id)
    if region_id is None:
        raise ValueError("region_kpi key requires region_id")
    return (kpi_name, region_id)


@dataclass(frozen=True)
class CollatedOutlier:
    """A single anomalous occurrence: consecutive outlier records condensed to one."""

    t_start: datetime
    t_end: datetime
    aggregated: tuple[float, ...]
    duration: int
    cell_id: str
    region_id: str

    def __post_init__(self) -> None:
        if self.duration < 1:
            raise ValueError("duration must be >= 1")
        if self.t_start > self.t_end:
            raise ValueError("t_start must not exceed t_end")
        if self.duration == 1 and self.t_start != self.t_end:
            raise ValueError("single-record occurrence must have t_start == t_end")

    @property
    def group_id(self) -> str:
        return f"{self.cell_id}@{fmt_ts(self.t_start)}"


# ---------------------------------------------------------------------------
# Extended conditions
# ---------------------------------------------------------------------------

_DURATION_OPS = {
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
}
_FIELD_OPS = {">": lambda a, b: a > b, "<": lambda a, b: a < b}


@dataclass(frozen=True)
class DurationCmp:
    """Compare an occurrence's duration against a fixed interval count."""

    op: str
    k: int

    def __post_init__(self) -> None:
        if self.op not in _DURATION_OPS:
            raise ValueError(f"duration op must be one of {sorted(_DURATION_OPS)}, got {self.op!r}")
        if self.k < 1:
            raise ValueError("duration bound must be a positive integer")

    def holds(self, duration: int, values: Sequence[float]) -> bool:
        return _DURATION_OPS[self.op](duration, self.k)

    def encode(self) -> str:
        return f"dur{self.op}{self.k}"

    def to_json(self) -> dict:
        return {"type": "duration", "op": self.op, "k": self.k}


@dataclass(frozen=True)
class FieldCmp:
    """Compare one field against a positive multiple of another, e.g. x1 > 2*x3."""

    lhs_field: int
    op: str
    coeff: float
    rhs_field: int

    def __post_init__(self) -> None:
        if self.op not in _FIELD_OPS:
            raise ValueError(f"field op must be one of {sorted(_FIELD_OPS)}, got {self.op!r}")
        if self.coeff <= 0:
            raise ValueError("field comparison coefficient must be > 0")
        if self.lhs_field < 0 or self.rhs_field < 0:
            raise ValueError("field indices must be non-negative")

    def holds(self, duration: int, values: Sequence[float]) -> bool:
        lhs, rhs = values[self.lhs_field], values[self.rhs_field]
        if is_missing(lhs) or is_missing(rhs):
            return False
        return _FIELD_OPS[self.op](lhs, self.coeff * rhs)

    def encode(self) -> str:
        return f"f{self.lhs_field}{self.op}{self.coeff:g}f{self.rhs_field}"

    def to_json(self) -> dict:
        return {
            "type": "field",
            "lhs": self.lhs_field,
            "op": self.op,
            "coeff": self.coeff,
            "rhs": self.rhs_field,
        }


ExtendedCondition = Union[DurationCmp, FieldCmp]


def extended_from_json(data: Mapping) -> ExtendedCondition:
    if data.get("type") == "duration":
        return DurationCmp(op=data["op"], k=int(data["k"]))
    if data.get("type") == "field":
        return FieldCmp(
            lhs_field=int(data["lhs"]),
            op=data["op"],
            coeff=float(data["coeff"]),
            rhs_field=int(data["rhs"]),
        )
    raise ValueError(f"unknown extended condition type: {data.get('type')!r}")


# ---------------------------------------------------------------------------
# Responses and rules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Response:
    """What to do when a rule matches: severity/priority metadata plus action descriptors."""

    kind: ResponseKind = ResponseKind.DEFAULT_ALARM
    severity: Severity | None = None
    priority: int | None = None
    actions: tuple[str, ...] = ()
    notes: str = ""

    def __post_init__(self) -> None:
        if self.kind is ResponseKind.NULL and self.actions:
            raise ValueError("null response must carry no actions")

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "severity": self.severity.value if self.severity else None,
            "priority": self.priority,
            "actions": list(self.actions),
            "notes": self.notes,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "Response":
        return cls(
            kind=ResponseKind(data.get("kind", "default_alarm")),
            severity=Severity(data["severity"]) if data.get("severity") else None,
            priority=data.get("priority"),
            actions=tuple(data.get("actions", ())),
            notes=data.get("notes", ""),
        )


NULL_RESPONSE = Response(kind=ResponseKind.NULL)
DEFAULT_ALARM = Response(kind=ResponseKind.DEFAULT_ALARM)


@dataclass(frozen=True)
class Rule:
    """A condition vector plus extended conditions, an occurrence count and a response."""

    conditions: tuple[Condition, ...]
    extended: tuple[ExtendedCondition, ...] = ()
    count: int = 0
    response: Response = DEFAULT_ALARM
    status: RuleStatus = RuleStatus.UNAPPRAISED
    rule_id: str = ""
    created_at: datetime = field(default_factory=utcnow)

    def __post_init__(self) -> None:
        if self.count < 0:
            raise ValueError("count must be non-negative")
        if self.status is RuleStatus.WHITELISTED and self.response.kind is not ResponseKind.NULL:
            raise ValueError("whitelisted rule must carry the null response")
        if self.status is RuleStatus.UNAPPRAISED and self.response.kind is not ResponseKind.DEFAULT_ALARM:
            raise ValueError("unappraised rule must carry the default response placeholder")
        if not self.rule_id:
            object.__setattr__(self, "rule_id", rule_id_for(self.conditions, self.extended))

    @property
    def dont_care_count(self) -> int:
        return sum(1 for c in self.conditions if c is Condition.DONT_CARE)

    def to_json(self) -> dict:
        return {
            "id": self.rule_id,
            "conditions": [c.glyph for c in self.conditions],
            "extended": [e.to_json() for e in self.extended],
            "count": self.count,
            "status": self.status.value,
            "response": self.response.to_json(),
            "created_at": fmt_ts(self.created_at),
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "Rule":
        return cls(
            conditions=tuple(Condition.from_glyph(g) for g in data["conditions"]),
            extended=tuple(extended_from_json(e) for e in data.get("extended", ())),
            count=int(data.get("count", 0)),
            response=Response.from_json(data.get("response", {})),
            status=RuleStatus(data.get("status", "unappraised")),
            rule_id=data.get("id", ""),
            created_at=parse_ts(data["created_at"]) if data.get("created_at") else utcnow(),
        )


def key_of(conditions: Sequence[Condition], extended: Sequence[ExtendedCondition] = ()) -> str:
    parts = _COND_SEP.join(c.glyph for c in conditions)
    for ext in extended:
        parts += _EXT_SEP + ext.encode()
    return parts


def canonical_key(rule: Rule) -> str:
    """Deterministic identity of a rule's conditions; count/response/status excluded."""
    return key_of(rule.conditions, rule.extended)


def rule_id_for(conditions: Sequence[Condition], extended: Sequence[ExtendedCondition] = ()) -> str:
    digest = hashlib.sha1(key_of(conditions, extended).encode()).hexdigest()
    return f"r{digest[:12]}"


# ---------------------------------------------------------------------------
# Rule sets
# ---------------------------------------------------------------------------


class RuleSetError(Exception):
    """Rule-set level contract violation (unknown id, duplicate key, bad state)."""


@dataclass(frozen=True)
class RuleSet:
    """The unappraised and appraised rule collections, keyed by canonical key.

    Instances are snapshots: every mutation in :mod:`rulemine.engine` builds a
    new RuleSet, so readers never observe partial edits.
    """

    schema: FieldSchema
    unappraised: Mapping[str, Rule] = field(default_factory=dict)
    appraised: Mapping[str, Rule] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for bucket in (self.unappraised, self.appraised):
            for key, rule in bucket.items():
                if canonical_key(rule) != key:
                    raise RuleSetError(f"rule {rule.rule_id} stored under stale key {key!r}")
                if len(rule.conditions) != len(self.schema):
                    raise RuleSetError(
                        f"rule {rule.rule_id} has {len(rule.conditions)} conditions, "
                        f"schema has {len(self.schema)}"
                    )

    def __len__(self) -> int:
        return len(self.unappraised) + len(self.appraised)

    def all_rules(self) -> list[Rule]:
        return list(self.unappraised.values()) + list(self.appraised.values())

    def find(self, rule_id: str) -> Rule:
        for bucket in (self.unappraised, self.appraised):
            for rule in bucket.values():
                if rule.rule_id == rule_id:
                    return rule
        raise RuleSetError(f"rule not found: {rule_id}")

    def replace_buckets(
        self,
        unappraised: Mapping[str, Rule] | None = None,
        appraised: Mapping[str, Rule] | None = None,
    ) -> "RuleSet":
        return RuleSet(
            schema=self.schema,
            unappraised=dict(self.unappraised if unappraised is None else unappraised),
            appraised=dict(self.appraised if appraised is None else appraised),
        )

    # -- persistence --------------------------------------------------------

    def to_json(self) -> dict:
        ordered = sorted(self.all_rules(), key=lambda r: (-r.count, r.rule_id))
        return {
            "schema_version": SCHEMA_VERSION,
            "fields": self.schema.to_json(),
            "rules": [r.to_json() for r in ordered],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"

    @classmethod
    def from_json(cls, data: Mapping) -> "RuleSet":
        schema = FieldSchema.from_json(data["fields"])
        unappraised: dict[str, Rule] = {}
        appraised: dict[str, Rule] = {}
        for raw in data.get("rules", ()):
            rule = Rule.from_json(raw)
            bucket = unappraised if rule.status is RuleStatus.UNAPPRAISED else appraised
            key = canonical_key(rule)
            if key in bucket:
                raise RuleSetError(f"duplicate canonical key in persisted rule set: {key!r}")
            bucket[key] = rule
        return cls(schema=schema, unappraised=unappraised, appraised=appraised)

    @classmethod
    def loads(cls, text: str) -> "RuleSet":
        return cls.from_json(json.loads(text))


def empty_ruleset(schema: FieldSchema) -> RuleSet:
    return RuleSet(schema=schema)
