"""Condition-vector rule mining and appraisal for multivariate KPI anomaly feeds."""

from .model import (
    Agg,
    CollatedOutlier,
    Condition,
    Context,
    ContextLevel,
    DurationCmp,
    FieldCmp,
    FieldSchema,
    FieldSpec,
    KpiRecord,
    Response,
    ResponseKind,
    Rule,
    RuleSet,
    RuleStatus,
    Scale,
    Severity,
    canonical_key,
)

__version__ = "0.1.0"

__all__ = [
    "Agg",
    "CollatedOutlier",
    "Condition",
    "Context",
    "ContextLevel",
    "DurationCmp",
    "FieldCmp",
    "FieldSchema",
    "FieldSpec",
    "KpiRecord",
    "Response",
    "ResponseKind",
    "Rule",
    "RuleSet",
    "RuleStatus",
    "Scale",
    "Severity",
    "canonical_key",
    "__version__",
]
