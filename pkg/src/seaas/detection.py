"""Cloud-side threat handling: sliding-window monitoring of resource access,
detection of policy violations / frequency anomalies / background exfiltration,
and the mitigation table that eliminates or rate-limits what it finds."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from .policy import DEFAULT_RULE_ID, Decision, PolicySet, Verdict
from .resources import AccessEvent, AppState, Criticality, Resource, classify_criticality


class ThreatType(str, Enum):
    POLICY_VIOLATION = "POLICY_VIOLATION"
    ANOMALOUS_FREQUENCY = "ANOMALOUS_FREQUENCY"
    BACKGROUND_EXFILTRATION = "BACKGROUND_EXFILTRATION"


class Severity(str, Enum):
    LOW = "LOW"
    MEDIUM = "MEDIUM"
    HIGH = "HIGH"


SEVERITY_BY_TYPE = {
    ThreatType.POLICY_VIOLATION: Severity.HIGH,
    ThreatType.ANOMALOUS_FREQUENCY: Severity.MEDIUM,
    ThreatType.BACKGROUND_EXFILTRATION: Severity.HIGH,
}


class ThreatStatus(str, Enum):
    DETECTED = "DETECTED"
    MITIGATED = "MITIGATED"


class MitigationKind(str, Enum):
    NONE = "NONE"
    BLOCK = "BLOCK"
    RATE_LIMIT = "RATE_LIMIT"
    REVOKE_PERMISSION = "REVOKE_PERMISSION"
    QUARANTINE_APP = "QUARANTINE_APP"


@dataclass(frozen=True)
class MitigationAction:
    kind: MitigationKind
    params: dict | None = None

    def to_wire(self) -> dict:
        out: dict = {"kind": self.kind.value}
        if self.params is not None:
            out["params"] = dict(self.params)
        return out

    @classmethod
    def from_wire(cls, obj: dict) -> "MitigationAction":
        return cls(kind=MitigationKind(obj["kind"]), params=obj.get("params"))


NO_MITIGATION = MitigationAction(kind=MitigationKind.NONE)


@dataclass(frozen=True)
class DetectionConfig:
    horizon_s: int = 300
    frequency_window_s: int = 60
    anomaly_threshold: int = 30
    repeat_threshold: int = 3


DEFAULT_CONFIG = DetectionConfig()


@dataclass
class WindowState:
    """Ring of recent access timestamps for one (device, app, resource)."""

    key: tuple[str, str, Resource]
    horizon_s: int = DEFAULT_CONFIG.horizon_s
    stamps: deque[int] = field(default_factory=deque)

    def count_within(self, window_s: int, now_ms: int) -> int:
        """Accesses in the window (now - window_s, now]."""
        cutoff = now_ms - window_s * 1000
        return sum(1 for ts in self.stamps if ts > cutoff)


def monitor_update(
    state: WindowState, event: AccessEvent, config: DetectionConfig = DEFAULT_CONFIG
) -> tuple[WindowState, int]:
    """Record an access and return the count inside the default frequency
    window, including this event. Entries older than the horizon are evicted."""
    state.stamps.append(event.at_ms)
    horizon_cutoff = event.at_ms - state.horizon_s * 1000
    while state.stamps and state.stamps[0] <= horizon_cutoff:
        state.stamps.popleft()
    return state, state.count_within(config.frequency_window_s, event.at_ms)


@dataclass(frozen=True)
class ThreatReport:
    threat_id: str
    device_id: str
    app_id: str
    event_seqs: tuple[int, ...]
    threat_type: ThreatType
    severity: Severity
    status: ThreatStatus
    mitigation: MitigationAction
    detected_at_ms: int

    def to_wire(self) -> dict:
        return {
            "threat_id": self.threat_id,
            "device": self.device_id,
            "app": self.app_id,
            "event_seqs": list(self.event_seqs),
            "type": self.threat_type.value,
            "severity": self.severity.value,
            "status": self.status.value,
            "mitigation": self.mitigation.to_wire(),
            "detected_at_ms": self.detected_at_ms,
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "ThreatReport":
        return cls(
            threat_id=obj["threat_id"],
            device_id=obj["device"],
            app_id=obj["app"],
            event_seqs=tuple(obj["event_seqs"]),
            threat_type=ThreatType(obj["type"]),
            severity=Severity(obj["severity"]),
            status=ThreatStatus(obj["status"]),
            mitigation=MitigationAction.from_wire(obj["mitigation"]),
            detected_at_ms=obj["detected_at_ms"],
        )


def threat_id_for(device_id: str, event_seq: int) -> str:
    # Deterministic identity: at most one threat per event, so replays and
    # crash recovery converge on the same report.
    return f"t:{device_id}:{event_seq}"


def detect(
    event: AccessEvent,
    decision: Decision,
    window_count: int,
    policy: PolicySet,
    *,
    now_ms: int,
    config: DetectionConfig = DEFAULT_CONFIG,
) -> ThreatReport | None:
    """Emit at most one threat per event; trigger precedence prevents
    double-reporting.

    (a) a rule-backed DENY is a policy violation; (b) a frequency above the
    anomaly threshold is anomalous; (c) a background touch of a critical
    resource with no explicit grant behind it is exfiltration.
    """
    threat_type: ThreatType | None = None
    if decision.verdict == Verdict.DENY and decision.matched_rule_id != DEFAULT_RULE_ID:
        threat_type = ThreatType.POLICY_VIOLATION
    elif window_count > config.anomaly_threshold:
        threat_type = ThreatType.ANOMALOUS_FREQUENCY
    else:
        explicitly_granted = decision.matched_rule_id != DEFAULT_RULE_ID and decision.verdict in (
            Verdict.ALLOW,
            Verdict.ALLOW_CONSTRAINED,
        )
        if (
            event.app_state == AppState.BACKGROUND
            and classify_criticality(event.resource) == Criticality.CRITICAL
            and not explicitly_granted
        ):
            threat_type = ThreatType.BACKGROUND_EXFILTRATION
    if threat_type is None:
        return None
    return ThreatReport(
        threat_id=threat_id_for(event.device_id, event.event_seq),
        device_id=event.device_id,
        app_id=event.app_id,
        event_seqs=(event.event_seq,),
        threat_type=threat_type,
        severity=SEVERITY_BY_TYPE[threat_type],
        status=ThreatStatus.DETECTED,
        mitigation=NO_MITIGATION,
        detected_at_ms=now_ms,
    )


def mitigate(
    threat: ThreatReport, history: int, config: DetectionConfig = DEFAULT_CONFIG
) -> MitigationAction:
    """Pick the action for a detected threat.

    `history` is the count of prior HIGH threats by the same (device, app);
    repeated high-severity offenders get the app quarantined outright.
    """
    if threat.threat_type == ThreatType.POLICY_VIOLATION:
        return MitigationAction(kind=MitigationKind.BLOCK)
    if threat.threat_type == ThreatType.ANOMALOUS_FREQUENCY:
        return MitigationAction(
            kind=MitigationKind.RATE_LIMIT,
            params={"count": config.anomaly_threshold, "window_s": config.frequency_window_s},
        )
    if history + 1 >= config.repeat_threshold:
        return MitigationAction(kind=MitigationKind.QUARANTINE_APP, params={"app": threat.app_id})
    return MitigationAction(
        kind=MitigationKind.REVOKE_PERMISSION, params={"app": threat.app_id}
    )
