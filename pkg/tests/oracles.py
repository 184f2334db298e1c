"""Independent reference implementations used only to cross-check the engine.

Everything here is written from the contract, not from the production code:
naive linear scans, fresh selector matching, brute-force window counting."""

from __future__ import annotations

from seaas.policy import Decision, PolicyRule, PolicySet, RuleDecision, Verdict, DAY_MS
from seaas.resources import AccessEvent, Criticality, Resource

CRITICAL_NAMES = {
    "MICROPHONE",
    "GPS",
    "CAMERA",
    "CONTACTS",
    "PHOTOS",
    "SMS",
    "CALL_LOG",
    "DEVICE_IDENTITY",
}

HARDWARE_NAMES = {
    "MICROPHONE",
    "GPS",
    "CAMERA",
    "ACCELEROMETER",
    "GYROSCOPE",
    "WIFI_RADIO",
    "DEVICE_IDENTITY",
}


def naive_criticality(resource: Resource) -> Criticality:
    return Criticality.CRITICAL if resource.value in CRITICAL_NAMES else Criticality.NORMAL


def _naive_match(rule: PolicyRule, event: AccessEvent, window_count: int) -> bool:
    sel = rule.app_selector
    if sel == "*":
        app_ok = True
    elif sel.endswith("*"):
        app_ok = event.app_id.startswith(sel[:-1])
    else:
        app_ok = event.app_id == sel
    if not app_ok:
        return False

    sel = rule.resource_selector
    if sel == "*":
        res_ok = True
    elif sel == "category:HARDWARE":
        res_ok = event.resource.value in HARDWARE_NAMES
    elif sel == "category:SOFTWARE":
        res_ok = event.resource.value not in HARDWARE_NAMES
    else:
        res_ok = event.resource.value == sel
    if not res_ok:
        return False

    if rule.action_selector != "*" and event.action.value != rule.action_selector:
        return False

    ctx = rule.when
    if ctx is not None:
        if ctx.app_state is not None and event.app_state != ctx.app_state:
            return False
        if ctx.time_window is not None:
            tod = event.at_ms % DAY_MS
            if not (ctx.time_window[0] <= tod < ctx.time_window[1]):
                return False
        if ctx.max_per_window is not None and window_count >= ctx.max_per_window.count:
            return False
    return True


def _naive_specificity(rule: PolicyRule) -> int:
    score = 0
    if rule.app_selector == "*":
        score += 0
    elif rule.app_selector.endswith("*"):
        score += 2
    else:
        score += 4
    if rule.resource_selector == "*":
        score += 0
    elif rule.resource_selector.startswith("category:"):
        score += 2
    else:
        score += 4
    if rule.action_selector != "*":
        score += 1
    if rule.when is not None:
        score += sum(
            1
            for p in (rule.when.app_state, rule.when.time_window, rule.when.max_per_window)
            if p is not None
        )
    return score


def naive_evaluate(pset: PolicySet, event: AccessEvent, window_counts: dict[str, int]) -> Decision:
    """Linear scan over the rules in stored order, keeping the best match by
    the declared total order (priority desc, specificity desc, rule id asc)."""
    best_key: tuple | None = None
    best_rule: PolicyRule | None = None
    for rule in pset.rules:
        if _naive_match(rule, event, window_counts.get(rule.rule_id, 0)):
            key = (-rule.priority, -_naive_specificity(rule), rule.rule_id)
            if best_key is None or key < best_key:
                best_key = key
                best_rule = rule
    if best_rule is None:
        default = pset.defaults[naive_criticality(event.resource)]
        return Decision(
            device_id=event.device_id,
            event_seq=event.event_seq,
            verdict=Verdict.ALLOW if default == RuleDecision.GRANT else Verdict.DENY,
            matched_rule_id="DEFAULT",
            policy_version=pset.version,
        )
    if best_rule.decision == RuleDecision.GRANT:
        verdict, constraints = Verdict.ALLOW, None
    elif best_rule.decision == RuleDecision.DENY:
        verdict, constraints = Verdict.DENY, None
    else:
        verdict, constraints = Verdict.ALLOW_CONSTRAINED, best_rule.constraints
    return Decision(
        device_id=event.device_id,
        event_seq=event.event_seq,
        verdict=verdict,
        matched_rule_id=best_rule.rule_id,
        policy_version=pset.version,
        constraints_applied=constraints,
    )


def brute_force_window_count(all_at_ms: list[int], now_ms: int, window_s: int) -> int:
    """Count of timestamps inside (now - window, now] over the full trace."""
    lo = now_ms - window_s * 1000
    return sum(1 for ts in all_at_ms if lo < ts <= now_ms)


def brute_force_label_join(
    labels: dict[tuple[str, int], str], threat_keys: set[tuple[str, int]]
) -> tuple[int, int, int]:
    """(detected, undetected, false_positives) recomputed the slow way."""
    detected = 0
    undetected = 0
    false_positives = 0
    for key, label in labels.items():
        if label == "benign":
            if key in threat_keys:
                false_positives += 1
        elif key in threat_keys:
            detected += 1
        else:
            undetected += 1
    return detected, undetected, false_positives
