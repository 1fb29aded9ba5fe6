"""Rule engine: classify fields against references, formulate condition-vector
rules, match observed vectors with don't-care semantics, and apply the four
appraisal actions (assign / split / combine / whitelist) plus critical-frequency
auto-whitelisting and recounting.

All functions are pure: mutations take a RuleSet snapshot and return a new one.
A single writer should serialize mutations; readers can hold any snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Iterable, NamedTuple, Sequence

from .model import (
    DEFAULT_ALARM,
    NULL_RESPONSE,
    CollatedOutlier,
    Condition,
    ExtendedCondition,
    FieldSchema,
    FieldSpec,
    Response,
    Rule,
    RuleSet,
    RuleSetError,
    RuleStatus,
    Scale,
    canonical_key,
    is_missing,
    key_of,
    utcnow,
)
from .references import ReferenceTable


class ReferenceGapError(Exception):
    """A field's context has no reference entry and the policy is to fail hard."""


@dataclass(frozen=True)
class ClassifyConfig:
    """Field-classification policy: thresholds come from the schema per field.

    Each field uses exactly one test (difference or ratio, by its scale);
    hybrid checks would extend classify_condition.
    """

    schema: FieldSchema
    ratio_epsilon: float = 1e-9
    missing_ref_error: bool = False

    def __post_init__(self) -> None:
        if self.ratio_epsilon <= 0:
            raise ValueError("ratio_epsilon must be positive")


@dataclass(frozen=True)
class AppraisalConfig:
    f_c: int | None = None
    default_response: Response = DEFAULT_ALARM

    def __post_init__(self) -> None:
        if self.f_c is not None and self.f_c < 1:
            raise ValueError("critical frequency must be >= 1")


@dataclass
class Diagnostics:
    """Soft anomalies of a formulate/generate run: imputed fields, missing refs."""

    imputed_fields: int = 0
    reference_gaps: list[tuple[str, ...]] = field(default_factory=list)


def classify_condition(x: float, ref: float, field_cfg: FieldSpec, ratio_epsilon: float = 1e-9) -> Condition:
    """Classify one observed value against its reference.

    Linear scale uses a difference threshold, exponential a ratio threshold;
    a deviation must strictly exceed theta to count as greater/lesser.
    Missing observations classify as approximately-equal.
    """
    if is_missing(x):
        return Condition.APPROX
    if field_cfg.scale is Scale.LINEAR:
        diff = x - ref
        if diff > field_cfg.theta:
            return Condition.GT
        if diff < -field_cfg.theta:
            return Condition.LT
        return Condition.APPROX
    # Ratio test for nonnegative data; tiny values clamp to epsilon before division.
    xp = max(x, ratio_epsilon)
    refp = max(ref, ratio_epsilon)
    if xp / refp > field_cfg.theta:
        return Condition.GT
    if refp / xp > field_cfg.theta:
        return Condition.LT
    return Condition.APPROX


def formulate_vector(
    outlier: CollatedOutlier,
    table: ReferenceTable,
    cfg: ClassifyConfig,
    diagnostics: Diagnostics | None = None,
) -> tuple[Condition, ...]:
    """Classify every aggregated field of an occurrence against its context reference."""
    vector: list[Condition] = []
    for i, spec in enumerate(cfg.schema):
        entry = table.lookup(spec.name, cell_id=outlier.cell_id, region_id=outlier.region_id)
        if entry is None:
            key = (spec.name, outlier.cell_id)
            if cfg.missing_ref_error:
                raise ReferenceGapError(f"no reference entry for context {key}")
            if diagnostics is not None:
                diagnostics.reference_gaps.append(key)
            vector.append(Condition.APPROX)
            continue
        x = outlier.aggregated[i]
        if is_missing(x) and diagnostics is not None:
            diagnostics.imputed_fields += 1
        vector.append(classify_condition(x, entry.ref, spec, cfg.ratio_epsilon))
    return tuple(vector)


def generate_ruleset(
    outliers: Sequence[CollatedOutlier],
    table: ReferenceTable,
    cfg: ClassifyConfig,
    created_at: datetime | None = None,
    diagnostics: Diagnostics | None = None,
) -> RuleSet:
    """One unappraised rule per distinct condition vector, counting occurrences."""
    created = created_at if created_at is not None else utcnow()
    unappraised: dict[str, Rule] = {}
    for outlier in outliers:
        vector = formulate_vector(outlier, table, cfg, diagnostics)
        key = key_of(vector)
        existing = unappraised.get(key)
        if existing is not None:
            unappraised[key] = replace(existing, count=existing.count + 1)
        else:
            unappraised[key] = Rule(conditions=vector, count=1, created_at=created)
    return RuleSet(schema=cfg.schema, unappraised=unappraised)


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------


class MatchExtras(NamedTuple):
    """Occurrence attributes extended conditions can reference."""

    duration: int
    aggregated: tuple[float, ...]


def vector_satisfies(rule: Rule, vector: Sequence[Condition], extras: MatchExtras) -> bool:
    if len(rule.conditions) != len(vector):
        return False
    for want, got in zip(rule.conditions, vector):
        if want is not Condition.DONT_CARE and want is not got:
            return False
    return all(ext.holds(extras.duration, extras.aggregated) for ext in rule.extended)


def match_rule(
    vector: Sequence[Condition],
    extras: MatchExtras,
    appraised: RuleSet,
) -> Rule | None:
    """Most specific appraised rule satisfied by the vector, or None.

    Specificity: fewest don't-cares, then more extended conditions, then
    earliest created_at, then rule id (total order for determinism).
    """
    candidates = [
        r for r in appraised.appraised.values() if vector_satisfies(r, vector, extras)
    ]
    if not candidates:
        return None
    return min(
        candidates,
        key=lambda r: (r.dont_care_count, -len(r.extended), r.created_at, r.rule_id),
    )


# ---------------------------------------------------------------------------
# Appraisal actions
# ---------------------------------------------------------------------------


def _take_unappraised(ruleset: RuleSet, rule_id: str) -> tuple[str, Rule]:
    for key, rule in ruleset.unappraised.items():
        if rule.rule_id == rule_id:
            return key, rule
    for rule in ruleset.appraised.values():
        if rule.rule_id == rule_id:
            raise RuleSetError(f"rule {rule_id} already appraised")
    raise RuleSetError(f"rule not found: {rule_id}")


def _insert_appraised(appraised: dict[str, Rule], rule: Rule) -> None:
    key = canonical_key(rule)
    if key in appraised:
        raise RuleSetError(
            f"appraised set already holds a rule with conditions {key!r} "
            f"({appraised[key].rule_id})"
        )
    appraised[key] = rule


def assign_response(
    ruleset: RuleSet,
    rule_id: str,
    response: Response,
    extended: Sequence[ExtendedCondition] = (),
) -> RuleSet:
    """Appraise a rule with a concrete response, optionally extending it first."""
    key, rule = _take_unappraised(ruleset, rule_id)
    unappraised = dict(ruleset.unappraised)
    del unappraised[key]
    new_extended = rule.extended + tuple(extended)
    moved = replace(
        rule,
        extended=new_extended,
        response=response,
        status=RuleStatus.APPRAISED,
        rule_id="",  # rebind to the new canonical key
    )
    appraised = dict(ruleset.appraised)
    _insert_appraised(appraised, moved)
    return ruleset.replace_buckets(unappraised=unappraised, appraised=appraised)


def whitelist_rule(ruleset: RuleSet, rule_id: str) -> RuleSet:
    """Mark a rule's pattern as not business-relevant: null response, no alarms."""
    key, rule = _take_unappraised(ruleset, rule_id)
    unappraised = dict(ruleset.unappraised)
    del unappraised[key]
    moved = replace(rule, response=NULL_RESPONSE, status=RuleStatus.WHITELISTED)
    appraised = dict(ruleset.appraised)
    _insert_appraised(appraised, moved)
    return ruleset.replace_buckets(unappraised=unappraised, appraised=appraised)


def split_rule(ruleset: RuleSet, rule_id: str, masks: Sequence[Iterable[int]]) -> RuleSet:
    """Split a rule into children that keep the original condition at the masked
    indices and don't-care elsewhere. Children land in the unappraised set;
    duplicates against existing keys merge. Counts are interim until recount.
    """
    key, rule = _take_unappraised(ruleset, rule_id)
    n = len(rule.conditions)
    if not masks:
        raise RuleSetError("split needs at least one mask")
    index_sets: list[frozenset[int]] = []
    for mask in masks:
        idx = frozenset(mask)
        if not idx:
            raise RuleSetError("split mask must not be empty")
        if any(i < 0 or i >= n for i in idx):
            raise RuleSetError(f"split mask {sorted(idx)} out of range for {n} fields")
        index_sets.append(idx)

    unappraised = dict(ruleset.unappraised)
    del unappraised[key]
    for idx in index_sets:
        conditions = tuple(
            c if i in idx else Condition.DONT_CARE for i, c in enumerate(rule.conditions)
        )
        child_key = key_of(conditions, rule.extended)
        existing = unappraised.get(child_key)
        if existing is not None:
            unappraised[child_key] = replace(existing, count=existing.count + rule.count)
        else:
            unappraised[child_key] = Rule(
                conditions=conditions,
                extended=rule.extended,
                count=rule.count,
                created_at=rule.created_at,
            )
    return ruleset.replace_buckets(unappraised=unappraised)


def combine_rules(ruleset: RuleSet, rule_id: str, target_rule_id: str) -> RuleSet:
    """Fold an unappraised rule into an appraised one by generalizing every
    differing position of the target to don't-care. The target keeps its
    response and created_at.
    """
    src_key, source = _take_unappraised(ruleset, rule_id)
    target_key = None
    for key, rule in ruleset.appraised.items():
        if rule.rule_id == target_rule_id:
            target_key, target = key, rule
            break
    if target_key is None:
        for rule in ruleset.unappraised.values():
            if rule.rule_id == target_rule_id:
                raise RuleSetError(f"combine target {target_rule_id} is not appraised")
        raise RuleSetError(f"rule not found: {target_rule_id}")
    if len(source.conditions) != len(target.conditions):
        raise RuleSetError("combine requires vectors of equal length")

    merged = tuple(
        t if s is t else Condition.DONT_CARE
        for s, t in zip(source.conditions, target.conditions)
    )
    unappraised = dict(ruleset.unappraised)
    del unappraised[src_key]
    appraised = dict(ruleset.appraised)
    del appraised[target_key]
    new_target = replace(
        target,
        conditions=merged,
        count=target.count + source.count,  # interim; recount restores truth
        rule_id="",
    )
    _insert_appraised(appraised, new_target)
    return ruleset.replace_buckets(unappraised=unappraised, appraised=appraised)


def auto_whitelist(
    ruleset: RuleSet, f_c: int, default_response: Response = DEFAULT_ALARM
) -> RuleSet:
    """Statistical appraisal fallback: whitelist counts strictly above the
    critical frequency, give every remaining unappraised rule the default alarm.
    """
    if f_c < 1:
        raise ValueError("critical frequency must be >= 1")
    unappraised = dict(ruleset.unappraised)
    appraised = dict(ruleset.appraised)
    for key in list(unappraised):
        rule = unappraised.pop(key)
        if rule.count > f_c:
            moved = replace(rule, response=NULL_RESPONSE, status=RuleStatus.WHITELISTED)
        else:
            moved = replace(rule, response=default_response, status=RuleStatus.APPRAISED)
        _insert_appraised(appraised, moved)
    return ruleset.replace_buckets(unappraised=unappraised, appraised=appraised)


def recount(
    ruleset: RuleSet,
    training_outliers: Sequence[CollatedOutlier],
    table: ReferenceTable,
    cfg: ClassifyConfig,
) -> RuleSet:
    """Recompute every rule's count as the number of training occurrences the
    rule matches in isolation. Overlaps are allowed: one occurrence may count
    toward several rules once don't-cares exist.
    """
    prepared = [
        (formulate_vector(o, table, cfg), MatchExtras(o.duration, o.aggregated))
        for o in training_outliers
    ]

    def recounted(rule: Rule) -> Rule:
        n = sum(1 for vec, extras in prepared if vector_satisfies(rule, vec, extras))
        return replace(rule, count=n)

    return ruleset.replace_buckets(
        unappraised={k: recounted(r) for k, r in ruleset.unappraised.items()},
        appraised={k: recounted(r) for k, r in ruleset.appraised.items()},
    )
