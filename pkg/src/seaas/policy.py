"""Reconfigurable security policies: a small JSON rule language with
deterministic evaluation, canonical serialization, and versioned updates.

A rule selects (app, resource, action) with optional context predicates and
decides GRANT, DENY, or SELECTIVE (grant bounded by constraints). Conflicts
resolve by a total order: priority desc, specificity desc, rule id asc.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Mapping

from .resources import (
    AccessEvent,
    Action,
    AppState,
    Category,
    Criticality,
    Resource,
    classify_criticality,
    valid_app_id,
)

if TYPE_CHECKING:
    from .detection import MitigationAction

DAY_MS = 86_400_000

DEFAULT_RULE_ID = "DEFAULT"
QUARANTINE_RULE_ID = "QUARANTINE"
FALLBACK_RULE_ID = "FALLBACK_DEFAULT"


class PolicyError(Exception):
    """Base class for policy document rejections."""


class ParseError(PolicyError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        super().__init__(message)
        self.line = line
        self.col = col


class DuplicateRule(ParseError):
    pass


class InvalidRule(ParseError):
    pass


class RuleDecision(str, Enum):
    GRANT = "GRANT"
    DENY = "DENY"
    SELECTIVE = "SELECTIVE"


class Verdict(str, Enum):
    ALLOW = "ALLOW"
    DENY = "DENY"
    ALLOW_CONSTRAINED = "ALLOW_CONSTRAINED"


@dataclass(frozen=True)
class FrequencyWindow:
    count: int
    window_s: int

    def to_wire(self) -> dict:
        return {"count": self.count, "window_s": self.window_s}


@dataclass(frozen=True)
class RuleContext:
    """Conjunction of optional predicates a rule requires of an event."""

    app_state: AppState | None = None
    time_window: tuple[int, int] | None = None  # [start_ms, end_ms) on at_ms mod DAY_MS
    max_per_window: FrequencyWindow | None = None

    def predicate_kinds(self) -> int:
        return sum(
            1 for p in (self.app_state, self.time_window, self.max_per_window) if p is not None
        )

    def is_empty(self) -> bool:
        return self.predicate_kinds() == 0


@dataclass(frozen=True)
class Constraints:
    """Bounds attached to a SELECTIVE grant."""

    max_per_window: FrequencyWindow | None = None
    foreground_only: bool | None = None
    redact: bool | None = None

    def is_empty(self) -> bool:
        return (
            self.max_per_window is None
            and self.foreground_only is None
            and self.redact is None
        )

    def to_wire(self) -> dict:
        out: dict = {}
        if self.max_per_window is not None:
            out["max_per_window"] = self.max_per_window.to_wire()
        if self.foreground_only is not None:
            out["foreground_only"] = self.foreground_only
        if self.redact is not None:
            out["redact"] = self.redact
        return out


@dataclass(frozen=True)
class PolicyRule:
    rule_id: str
    priority: int
    app_selector: str
    resource_selector: str
    action_selector: str
    decision: RuleDecision
    when: RuleContext | None = None
    constraints: Constraints | None = None


@dataclass(frozen=True)
class PolicySet:
    version: int
    rules: tuple[PolicyRule, ...]
    defaults: Mapping[Criticality, RuleDecision]
    # Rules pre-sorted by the evaluation total order; derived, not compared.
    eval_order: tuple[PolicyRule, ...] = field(
        init=False, repr=False, compare=False, default=()
    )

    def __post_init__(self) -> None:
        # Rules are held in canonical document order so any two structurally
        # equal sets compare equal regardless of authoring order.
        object.__setattr__(
            self, "rules", tuple(sorted(self.rules, key=lambda r: (-r.priority, r.rule_id)))
        )
        ordered = tuple(
            sorted(self.rules, key=lambda r: (-r.priority, -specificity(r), r.rule_id))
        )
        object.__setattr__(self, "eval_order", ordered)

    def rule(self, rule_id: str) -> PolicyRule | None:
        for r in self.rules:
            if r.rule_id == rule_id:
                return r
        return None


@dataclass(frozen=True)
class Decision:
    """The engine's verdict for one event."""

    device_id: str
    event_seq: int
    verdict: Verdict
    matched_rule_id: str
    policy_version: int
    constraints_applied: Constraints | None = None
    mitigation: "MitigationAction | None" = None

    def to_wire(self) -> dict:
        out = {
            "device": self.device_id,
            "seq": self.event_seq,
            "verdict": self.verdict.value,
            "rule": self.matched_rule_id,
            "policy_version": self.policy_version,
        }
        if self.constraints_applied is not None:
            out["constraints"] = self.constraints_applied.to_wire()
        if self.mitigation is not None:
            out["mitigation"] = self.mitigation.to_wire()
        return out

    @classmethod
    def from_wire(cls, obj: dict) -> "Decision":
        from .detection import MitigationAction

        if not isinstance(obj, dict):
            raise ParseError("decision must be an object")
        try:
            constraints = None
            if "constraints" in obj:
                constraints = parse_constraints(obj["constraints"], where="decision")
            mitigation = None
            if "mitigation" in obj:
                mitigation = MitigationAction.from_wire(obj["mitigation"])
            return cls(
                device_id=obj["device"],
                event_seq=obj["seq"],
                verdict=Verdict(obj["verdict"]),
                matched_rule_id=obj["rule"],
                policy_version=obj["policy_version"],
                constraints_applied=constraints,
                mitigation=mitigation,
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ParseError(f"bad decision: {exc}") from None


# --------------------------------------------------------------------------
# Matching and evaluation


def _match_app(selector: str, app_id: str) -> bool:
    if selector.endswith("*"):
        return app_id.startswith(selector[:-1])
    return app_id == selector


def _match_resource(selector: str, resource: Resource) -> bool:
    if selector == "*":
        return True
    if selector.startswith("category:"):
        return resource.category.value == selector.split(":", 1)[1]
    return resource.value == selector


def _match_action(selector: str, action: Action) -> bool:
    return selector == "*" or action.value == selector


def _match_context(ctx: RuleContext, event: AccessEvent, window_count: int) -> bool:
    if ctx.app_state is not None and event.app_state != ctx.app_state:
        return False
    if ctx.time_window is not None:
        start, end = ctx.time_window
        tod = event.at_ms % DAY_MS
        if not (start <= tod < end):
            return False
    if ctx.max_per_window is not None and not window_count < ctx.max_per_window.count:
        return False
    return True


def match_rule(rule: PolicyRule, event: AccessEvent, window_count: int = 0) -> bool:
    """True iff every selector matches and every context predicate holds.

    window_count is the caller-supplied number of accesses by the event's
    (device, app, resource) inside the rule's frequency window ending at the
    event; 0 when the rule has no frequency predicate.
    """
    if not _match_app(rule.app_selector, event.app_id):
        return False
    if not _match_resource(rule.resource_selector, event.resource):
        return False
    if not _match_action(rule.action_selector, event.action):
        return False
    if rule.when is not None and not _match_context(rule.when, event, window_count):
        return False
    return True


def specificity(rule: PolicyRule) -> int:
    """Tie-break score: exact selectors beat globs/categories beat wildcards."""
    if rule.app_selector == "*":
        app = 0
    elif rule.app_selector.endswith("*"):
        app = 2
    else:
        app = 4
    if rule.resource_selector == "*":
        res = 0
    elif rule.resource_selector.startswith("category:"):
        res = 2
    else:
        res = 4
    act = 0 if rule.action_selector == "*" else 1
    ctx = rule.when.predicate_kinds() if rule.when is not None else 0
    return app + res + act + ctx


def evaluate(
    pset: PolicySet,
    event: AccessEvent,
    window_counts: Mapping[str, int] | None = None,
) -> Decision:
    """Deterministically decide one event against a policy set.

    The winner is the first matching rule in the total order
    (priority desc, specificity desc, rule id asc); with no match the
    criticality default applies.
    """
    counts = window_counts or {}
    for rule in pset.eval_order:
        if match_rule(rule, event, counts.get(rule.rule_id, 0)):
            return _decision_for_rule(rule, event, pset.version)
    default = pset.defaults[classify_criticality(event.resource)]
    verdict = Verdict.ALLOW if default == RuleDecision.GRANT else Verdict.DENY
    return Decision(
        device_id=event.device_id,
        event_seq=event.event_seq,
        verdict=verdict,
        matched_rule_id=DEFAULT_RULE_ID,
        policy_version=pset.version,
    )


def _decision_for_rule(rule: PolicyRule, event: AccessEvent, version: int) -> Decision:
    if rule.decision == RuleDecision.GRANT:
        verdict, constraints = Verdict.ALLOW, None
    elif rule.decision == RuleDecision.DENY:
        verdict, constraints = Verdict.DENY, None
    else:
        verdict, constraints = Verdict.ALLOW_CONSTRAINED, rule.constraints
    return Decision(
        device_id=event.device_id,
        event_seq=event.event_seq,
        verdict=verdict,
        matched_rule_id=rule.rule_id,
        policy_version=version,
        constraints_applied=constraints,
    )


# --------------------------------------------------------------------------
# Parsing and canonical serialization

_DOC_KEYS = {"version", "defaults", "rules"}
_RULE_KEYS = {"id", "priority", "app", "resource", "action", "when", "decision", "constraints"}
_WHEN_KEYS = {"app_state", "time_window", "max_per_window"}
_CONSTRAINT_KEYS = {"max_per_window", "foreground_only", "redact"}


def parse_policy_document(text: str) -> PolicySet:
    """Parse a UTF-8 policy document into a PolicySet, or reject it whole."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"syntax error: {exc.msg}", line=exc.lineno, col=exc.colno) from None
    if not isinstance(doc, dict):
        raise ParseError("document must be a JSON object", line=1)
    unknown = set(doc) - _DOC_KEYS
    if unknown:
        raise ParseError(f"unknown document keys: {sorted(unknown)}", line=1)

    version = doc.get("version", 1)
    if not _is_int(version) or version < 1:
        raise ParseError("version must be a positive integer", line=1)

    defaults = _parse_defaults(doc.get("defaults"))

    raw_rules = doc.get("rules", [])
    if not isinstance(raw_rules, list):
        raise ParseError("rules must be a list", line=1)
    rules: list[PolicyRule] = []
    seen: set[str] = set()
    for raw in raw_rules:
        rule = _parse_rule(raw)
        if rule.rule_id in seen:
            raise DuplicateRule(
                f"duplicate rule id: {rule.rule_id!r}",
                line=_locate_id(text, rule.rule_id, occurrence=2),
            )
        seen.add(rule.rule_id)
        rules.append(rule)
    return PolicySet(version=version, rules=tuple(rules), defaults=defaults)


def _parse_defaults(raw: object) -> dict[Criticality, RuleDecision]:
    if not isinstance(raw, dict):
        raise ParseError("defaults must map CRITICAL and NORMAL to GRANT or DENY", line=1)
    unknown = set(raw) - {"CRITICAL", "NORMAL"}
    if unknown:
        raise ParseError(f"unknown default keys: {sorted(unknown)}", line=1)
    defaults: dict[Criticality, RuleDecision] = {}
    for level in (Criticality.CRITICAL, Criticality.NORMAL):
        value = raw.get(level.value)
        if value not in (RuleDecision.GRANT.value, RuleDecision.DENY.value):
            raise ParseError(f"defaults.{level.value} must be GRANT or DENY", line=1)
        defaults[level] = RuleDecision(value)
    return defaults


def _parse_rule(raw: object) -> PolicyRule:
    if not isinstance(raw, dict):
        raise InvalidRule("rule must be an object")
    unknown = set(raw) - _RULE_KEYS
    if unknown:
        raise InvalidRule(f"unknown rule keys: {sorted(unknown)}")
    rule_id = raw.get("id")
    if not isinstance(rule_id, str) or not rule_id:
        raise InvalidRule("rule id must be a non-empty string")
    priority = raw.get("priority")
    if not _is_int(priority):
        raise InvalidRule(f"rule {rule_id!r}: priority must be an integer")
    app = raw.get("app")
    if not isinstance(app, str) or not _valid_app_selector(app):
        raise InvalidRule(f"rule {rule_id!r}: bad app selector {app!r}")
    resource = raw.get("resource")
    if not isinstance(resource, str) or not _valid_resource_selector(resource):
        raise InvalidRule(f"rule {rule_id!r}: bad resource selector {resource!r}")
    action = raw.get("action")
    if not isinstance(action, str) or not _valid_action_selector(action):
        raise InvalidRule(f"rule {rule_id!r}: bad action selector {action!r}")
    try:
        decision = RuleDecision(raw.get("decision"))
    except ValueError:
        raise InvalidRule(f"rule {rule_id!r}: decision must be GRANT, DENY, or SELECTIVE") from None

    when = None
    if "when" in raw:
        when = _parse_when(raw["when"], rule_id)
        if when.is_empty():
            when = None
    constraints = None
    if "constraints" in raw:
        constraints = parse_constraints(raw["constraints"], where=f"rule {rule_id!r}")
        if constraints.is_empty():
            constraints = None

    if decision == RuleDecision.SELECTIVE and constraints is None:
        raise InvalidRule(f"rule {rule_id!r}: SELECTIVE requires non-empty constraints")
    if decision != RuleDecision.SELECTIVE and constraints is not None:
        raise InvalidRule(f"rule {rule_id!r}: constraints are only valid with SELECTIVE")

    return PolicyRule(
        rule_id=rule_id,
        priority=priority,
        app_selector=app,
        resource_selector=resource,
        action_selector=action,
        decision=decision,
        when=when,
        constraints=constraints,
    )


def _parse_when(raw: object, rule_id: str) -> RuleContext:
    if not isinstance(raw, dict):
        raise InvalidRule(f"rule {rule_id!r}: when must be an object")
    unknown = set(raw) - _WHEN_KEYS
    if unknown:
        raise InvalidRule(f"rule {rule_id!r}: unknown when keys: {sorted(unknown)}")
    app_state = None
    if "app_state" in raw:
        try:
            app_state = AppState(raw["app_state"])
        except ValueError:
            raise InvalidRule(f"rule {rule_id!r}: bad app_state") from None
    time_window = None
    if "time_window" in raw:
        tw = raw["time_window"]
        if (
            not isinstance(tw, list)
            or len(tw) != 2
            or not all(_is_int(v) for v in tw)
            or not (0 <= tw[0] < tw[1] <= DAY_MS)
        ):
            raise InvalidRule(
                f"rule {rule_id!r}: time_window must be [start_ms, end_ms) within one day"
            )
        time_window = (tw[0], tw[1])
    max_per_window = None
    if "max_per_window" in raw:
        max_per_window = _parse_frequency(raw["max_per_window"], rule_id)
    return RuleContext(app_state=app_state, time_window=time_window, max_per_window=max_per_window)


def parse_constraints(raw: object, where: str) -> Constraints:
    if not isinstance(raw, dict):
        raise InvalidRule(f"{where}: constraints must be an object")
    unknown = set(raw) - _CONSTRAINT_KEYS
    if unknown:
        raise InvalidRule(f"{where}: unknown constraint keys: {sorted(unknown)}")
    max_per_window = None
    if "max_per_window" in raw:
        max_per_window = _parse_frequency(raw["max_per_window"], where)
    foreground_only = None
    if "foreground_only" in raw:
        if not isinstance(raw["foreground_only"], bool):
            raise InvalidRule(f"{where}: foreground_only must be a boolean")
        foreground_only = raw["foreground_only"]
    redact = None
    if "redact" in raw:
        if not isinstance(raw["redact"], bool):
            raise InvalidRule(f"{where}: redact must be a boolean")
        redact = raw["redact"]
    return Constraints(
        max_per_window=max_per_window, foreground_only=foreground_only, redact=redact
    )


def _parse_frequency(raw: object, where: str) -> FrequencyWindow:
    if not isinstance(raw, dict) or set(raw) != {"count", "window_s"}:
        raise InvalidRule(f"{where}: max_per_window needs exactly count and window_s")
    count, window_s = raw["count"], raw["window_s"]
    if not _is_int(count) or count < 1 or not _is_int(window_s) or window_s < 1:
        raise InvalidRule(f"{where}: max_per_window count and window_s must be positive")
    return FrequencyWindow(count=count, window_s=window_s)


def _valid_app_selector(selector: str) -> bool:
    if selector == "*":
        return True
    if selector.endswith("*"):
        prefix = selector[:-1]
        return bool(prefix) and "*" not in prefix and valid_app_id(prefix)
    return valid_app_id(selector) and "*" not in selector


def _valid_resource_selector(selector: str) -> bool:
    if selector == "*":
        return True
    if selector.startswith("category:"):
        return selector.split(":", 1)[1] in (Category.HARDWARE.value, Category.SOFTWARE.value)
    return selector in Resource.__members__


def _valid_action_selector(selector: str) -> bool:
    return selector == "*" or selector in Action.__members__


def _is_int(value: object) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _locate_id(text: str, rule_id: str, occurrence: int) -> int | None:
    """Best-effort line number of the nth `"id": "<rule_id>"` in the source."""
    pattern = re.compile(r'"id"\s*:\s*' + re.escape(json.dumps(rule_id)))
    for n, match in enumerate(pattern.finditer(text), start=1):
        if n == occurrence:
            return text.count("\n", 0, match.start()) + 1
    return None


def rule_to_wire(rule: PolicyRule) -> dict:
    out: dict = {
        "id": rule.rule_id,
        "priority": rule.priority,
        "app": rule.app_selector,
        "resource": rule.resource_selector,
        "action": rule.action_selector,
    }
    if rule.when is not None:
        when: dict = {}
        if rule.when.app_state is not None:
            when["app_state"] = rule.when.app_state.value
        if rule.when.time_window is not None:
            when["time_window"] = list(rule.when.time_window)
        if rule.when.max_per_window is not None:
            when["max_per_window"] = rule.when.max_per_window.to_wire()
        out["when"] = when
    out["decision"] = rule.decision.value
    if rule.constraints is not None:
        out["constraints"] = rule.constraints.to_wire()
    return out


def serialize_policy_document(pset: PolicySet) -> str:
    """Canonical form: fixed key order, two-space indent, rules sorted by
    (priority desc, rule id asc). parse(serialize(s)) structurally equals s."""
    ordered = pset.rules  # already canonical
    doc = {
        "version": pset.version,
        "defaults": {
            "CRITICAL": pset.defaults[Criticality.CRITICAL].value,
            "NORMAL": pset.defaults[Criticality.NORMAL].value,
        },
        "rules": [rule_to_wire(r) for r in ordered],
    }
    return json.dumps(doc, indent=2) + "\n"


def apply_update(pset: PolicySet, new_document: str) -> PolicySet:
    """Parse a replacement document and bump the version; rejection leaves
    the active set untouched (errors propagate before anything changes)."""
    parsed = parse_policy_document(new_document)
    return PolicySet(version=pset.version + 1, rules=parsed.rules, defaults=parsed.defaults)


def with_rule_replaced(pset: PolicySet, rule: PolicyRule) -> PolicySet:
    """New set (version bumped) with any same-id rule replaced by `rule`."""
    kept = tuple(r for r in pset.rules if r.rule_id != rule.rule_id)
    return PolicySet(version=pset.version + 1, rules=kept + (rule,), defaults=dict(pset.defaults))
