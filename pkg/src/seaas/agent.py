"""Simulated mobile device agent: replays a scenario script as access events,
offloads them to the cloud engine (or evaluates a cached policy locally),
enforces the decisions it gets back, and accounts every step in deterministic
work units so local and offloaded runs can be compared."""

from __future__ import annotations

import json
import math
import socket
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import protocol
from .detection import MitigationKind, WindowState, monitor_update
from .packs import default_policy_document
from .policy import (
    FALLBACK_RULE_ID,
    Decision,
    Verdict,
    evaluate,
    parse_policy_document,
)
from .protocol import FrameReader, Message, encode_frame
from .resources import (
    AccessEvent,
    Action,
    AppState,
    Criticality,
    Resource,
    classify_criticality,
    full_device,
    resource_from_name,
    valid_app_id,
)


class ScenarioError(Exception):
    pass


class LedgerError(Exception):
    pass


SCRIPT_LABELS = frozenset(
    {
        "benign",
        "threat:POLICY_VIOLATION",
        "threat:ANOMALOUS_FREQUENCY",
        "threat:BACKGROUND_EXFILTRATION",
    }
)


@dataclass(frozen=True)
class ScriptedEvent:
    at_ms: int
    app: str
    resource: Resource
    action: Action
    app_state: AppState
    payload_bytes: int
    label: str

    def to_wire(self) -> dict:
        return {
            "at_ms": self.at_ms,
            "app": self.app,
            "resource": self.resource.value,
            "action": self.action.value,
            "app_state": self.app_state.value,
            "payload_bytes": self.payload_bytes,
            "label": self.label,
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "ScriptedEvent":
        try:
            return cls(
                at_ms=obj["at_ms"],
                app=obj["app"],
                resource=resource_from_name(obj["resource"]),
                action=Action(obj["action"]),
                app_state=AppState(obj["app_state"]),
                payload_bytes=obj["payload_bytes"],
                label=obj["label"],
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ScenarioError(f"bad scripted event: {exc}") from None


def parse_script(lines: Iterable[str], where: str = "script") -> list[ScriptedEvent]:
    """Parse and validate a JSON-lines scenario; rejects the whole script
    before any event would be emitted."""
    events: list[ScriptedEvent] = []
    last_at = None
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{where}:{lineno}: not valid JSON: {exc.msg}") from None
        event = ScriptedEvent.from_wire(obj)
        if event.label not in SCRIPT_LABELS:
            raise ScenarioError(f"{where}:{lineno}: unknown label {event.label!r}")
        if not valid_app_id(event.app):
            raise ScenarioError(f"{where}:{lineno}: malformed app id {event.app!r}")
        if event.payload_bytes < 0:
            raise ScenarioError(f"{where}:{lineno}: negative payload_bytes")
        if last_at is not None and event.at_ms < last_at:
            raise ScenarioError(f"{where}:{lineno}: at_ms decreases")
        last_at = event.at_ms
        events.append(event)
    return events


def load_script(path: Path) -> list[ScriptedEvent]:
    path = Path(path)
    return parse_script(path.read_text(encoding="utf-8").splitlines(), where=str(path))


def write_script(path: Path, events: Sequence[ScriptedEvent]) -> None:
    lines = [json.dumps(e.to_wire(), separators=(",", ":")) for e in events]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# Work-unit accounting: a deterministic stand-in for device CPU cost. Local
# evaluation scales with rule count; offloading pays a flat protocol tax.

class Mode(str, Enum):
    LOCAL = "LOCAL"
    OFFLOADED = "OFFLOADED"


_FLAT_COSTS = {"generate": 1, "window": 2, "encode": 2, "apply": 1}


def step_cost(step: str, rules_count: int = 0) -> int:
    if step == "evaluate":
        return 4 + math.ceil(rules_count / 4)
    try:
        return _FLAT_COSTS[step]
    except KeyError:
        raise LedgerError(f"unknown work category: {step!r}") from None


@dataclass(frozen=True)
class WorkLedger:
    mode: Mode
    total: int = 0
    breakdown: Mapping[str, int] = field(default_factory=dict)


def account_work(ledger: WorkLedger, step: str, rules_count: int = 0) -> WorkLedger:
    """Charge one step to the ledger; pure, returns a new ledger."""
    cost = step_cost(step, rules_count)
    breakdown = dict(ledger.breakdown)
    breakdown[step] = breakdown.get(step, 0) + cost
    return WorkLedger(mode=ledger.mode, total=ledger.total + cost, breakdown=breakdown)


# --------------------------------------------------------------------------
# Fallback behaviour when the offload channel is down.

class DecisionSource(str, Enum):
    SERVER = "SERVER"
    LOCAL = "LOCAL"
    CACHE_STALE = "CACHE_STALE"
    FALLBACK_DEFAULT = "FALLBACK_DEFAULT"
    PRE_BLOCKED = "PRE_BLOCKED"


@dataclass(frozen=True)
class AppliedDecision:
    decision: Decision
    source: DecisionSource

    @property
    def stale(self) -> bool:
        return self.source == DecisionSource.CACHE_STALE


CacheKey = tuple[str, Resource, Action, AppState]


@dataclass
class FallbackCache:
    policy_version: int = 0
    policy_document: str | None = None
    decisions: dict[CacheKey, Decision] = field(default_factory=dict)

    def remember(self, event: AccessEvent, decision: Decision) -> None:
        self.decisions[_cache_key(event)] = decision


def _cache_key(event: AccessEvent) -> CacheKey:
    return (event.app_id, event.resource, event.action, event.app_state)


def fallback_decision(event: AccessEvent, cache: FallbackCache) -> AppliedDecision:
    """Offline verdict: reuse the cached decision for an identical access
    (flagged stale), else fail closed on critical resources."""
    cached = cache.decisions.get(_cache_key(event))
    if cached is not None:
        reused = replace(cached, event_seq=event.event_seq)
        return AppliedDecision(decision=reused, source=DecisionSource.CACHE_STALE)
    critical = classify_criticality(event.resource) == Criticality.CRITICAL
    verdict = Verdict.DENY if critical else Verdict.ALLOW
    return AppliedDecision(
        decision=Decision(
            device_id=event.device_id,
            event_seq=event.event_seq,
            verdict=verdict,
            matched_rule_id=FALLBACK_RULE_ID,
            policy_version=cache.policy_version,
        ),
        source=DecisionSource.FALLBACK_DEFAULT,
    )


# --------------------------------------------------------------------------
# The agent run loop.

@dataclass(frozen=True)
class AgentConfig:
    batch_size: int = 32
    decision_timeout_s: float = 2.0
    agent_version: str = "0.1.0"


@dataclass
class AgentRunReport:
    device_id: str
    mode: Mode
    events_emitted: int
    verdicts: dict[str, int]
    sources: dict[str, int]
    pre_blocked: int
    stale: int
    fallback_events: int
    policy_version: int
    work: WorkLedger

    def to_json(self) -> str:
        doc = {
            "device_id": self.device_id,
            "mode": self.mode.value,
            "events_emitted": self.events_emitted,
            "verdicts": {k: self.verdicts[k] for k in sorted(self.verdicts)},
            "sources": {k: self.sources[k] for k in sorted(self.sources)},
            "pre_blocked": self.pre_blocked,
            "stale": self.stale,
            "fallback_events": self.fallback_events,
            "policy_version": self.policy_version,
            "work": {
                "mode": self.work.mode.value,
                "total": self.work.total,
                "breakdown": {k: self.work.breakdown[k] for k in sorted(self.work.breakdown)},
            },
        }
        return json.dumps(doc, indent=2) + "\n"


class ConnectionLost(Exception):
    pass


class AgentConnection:
    """Blocking client for the offload wire protocol."""

    def __init__(self, host: str, port: int, connect_timeout_s: float = 5.0):
        self.sock = socket.create_connection((host, port), timeout=connect_timeout_s)
        self._reader = FrameReader()
        self._pending: deque[Message] = deque()

    def send(self, msg: Message) -> None:
        try:
            self.sock.sendall(encode_frame(msg))
        except OSError as exc:
            raise ConnectionLost(str(exc)) from None

    def recv(self, timeout_s: float) -> Message | None:
        """Next message, or None when the timeout lapses."""
        if self._pending:
            return self._pending.popleft()
        self.sock.settimeout(timeout_s)
        while True:
            try:
                data = self.sock.recv(65536)
            except socket.timeout:
                return None
            except OSError as exc:
                raise ConnectionLost(str(exc)) from None
            if not data:
                raise ConnectionLost("connection closed by peer")
            for msg in self._reader.feed(data):
                self._pending.append(msg)
            if self._pending:
                return self._pending.popleft()

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


def run_scenario(
    script: Sequence[ScriptedEvent],
    mode: Mode,
    connection=None,
    *,
    device_id: str,
    policy_document: str | None = None,
    config: AgentConfig = AgentConfig(),
) -> AgentRunReport:
    """Replay a scenario in the given mode and return the run report.

    Deterministic for a fixed (script, policy, mode): same decisions, same
    work totals, byte-identical report.
    """
    _revalidate(script)
    if mode == Mode.OFFLOADED:
        if connection is None:
            raise ScenarioError("offloaded mode requires a connection")
        return _run_offloaded(script, connection, device_id, config)
    return _run_local(script, device_id, policy_document)


def _revalidate(script: Sequence[ScriptedEvent]) -> None:
    last_at = None
    for i, event in enumerate(script, start=1):
        if event.label not in SCRIPT_LABELS:
            raise ScenarioError(f"event {i}: unknown label {event.label!r}")
        if last_at is not None and event.at_ms < last_at:
            raise ScenarioError(f"event {i}: at_ms decreases")
        last_at = event.at_ms


class _Enforcement:
    """Device-side enforcement state: once a deny or quarantine lands, the
    same access is pre-blocked locally without another round trip."""

    def __init__(self) -> None:
        self.blocked_keys: set[CacheKey] = set()
        self.blocked_apps: set[str] = set()

    def blocked(self, event: AccessEvent) -> bool:
        return event.app_id in self.blocked_apps or _cache_key(event) in self.blocked_keys

    def note(self, event: AccessEvent, decision: Decision) -> None:
        if decision.verdict == Verdict.DENY:
            self.blocked_keys.add(_cache_key(event))
        if (
            decision.mitigation is not None
            and decision.mitigation.kind == MitigationKind.QUARANTINE_APP
        ):
            self.blocked_apps.add(event.app_id)


class _Tally:
    def __init__(self) -> None:
        self.verdicts: dict[str, int] = {}
        self.sources: dict[str, int] = {}

    def add(self, applied: AppliedDecision) -> None:
        v = applied.decision.verdict.value
        s = applied.source.value
        self.verdicts[v] = self.verdicts.get(v, 0) + 1
        self.sources[s] = self.sources.get(s, 0) + 1


def _pre_blocked_decision(event: AccessEvent, policy_version: int) -> AppliedDecision:
    return AppliedDecision(
        decision=Decision(
            device_id=event.device_id,
            event_seq=event.event_seq,
            verdict=Verdict.DENY,
            matched_rule_id="PRE_BLOCKED",
            policy_version=policy_version,
        ),
        source=DecisionSource.PRE_BLOCKED,
    )


def _run_local(
    script: Sequence[ScriptedEvent], device_id: str, policy_document: str | None
) -> AgentRunReport:
    document = policy_document if policy_document is not None else default_policy_document()
    pset = parse_policy_document(document)
    rules_count = len(pset.rules)
    ledger = WorkLedger(mode=Mode.LOCAL)
    tally = _Tally()
    enforcement = _Enforcement()
    windows: dict[tuple[str, str, Resource], WindowState] = {}
    pre_blocked = 0
    for seq, scripted in enumerate(script, start=1):
        event = _to_event(scripted, device_id, seq)
        if enforcement.blocked(event):
            ledger = account_work(ledger, "apply")
            tally.add(_pre_blocked_decision(event, pset.version))
            pre_blocked += 1
            continue
        ledger = account_work(ledger, "generate")
        wkey = (device_id, event.app_id, event.resource)
        ws = windows.get(wkey)
        if ws is None:
            ws = WindowState(key=wkey)
            windows[wkey] = ws
        monitor_update(ws, event)
        ledger = account_work(ledger, "window")
        counts = {
            rule.rule_id: ws.count_within(rule.when.max_per_window.window_s, event.at_ms)
            for rule in pset.eval_order
            if rule.when is not None and rule.when.max_per_window is not None
        }
        decision = evaluate(pset, event, counts)
        ledger = account_work(ledger, "evaluate", rules_count)
        applied = AppliedDecision(decision=decision, source=DecisionSource.LOCAL)
        tally.add(applied)
        enforcement.note(event, decision)
    return AgentRunReport(
        device_id=device_id,
        mode=Mode.LOCAL,
        events_emitted=len(script),
        verdicts=tally.verdicts,
        sources=tally.sources,
        pre_blocked=pre_blocked,
        stale=0,
        fallback_events=0,
        policy_version=pset.version,
        work=ledger,
    )


def _run_offloaded(
    script: Sequence[ScriptedEvent],
    connection,
    device_id: str,
    config: AgentConfig,
) -> AgentRunReport:
    cache = FallbackCache()
    ledger = WorkLedger(mode=Mode.OFFLOADED)
    tally = _Tally()
    enforcement = _Enforcement()
    pre_blocked = 0
    fallback_events = 0
    connected = True
    sid: str | None = None

    try:
        connection.send(protocol.hello(full_device(device_id, config.agent_version)))
        reply = _await_type(connection, "hello_ack", config.decision_timeout_s, cache, sid=None)
        if reply is None:
            connected = False
        else:
            sid = reply.sid
            cache.policy_version = reply.version or 0
            cache.policy_document = reply.policy
    except ConnectionLost:
        connected = False

    batch: list[AccessEvent] = []

    def apply_server_decisions(events: list[AccessEvent], decisions: Sequence[Decision]) -> None:
        nonlocal ledger
        by_seq = {e.event_seq: e for e in events}
        for decision in decisions:
            event = by_seq.get(decision.event_seq)
            if event is None:
                continue
            ledger = account_work(ledger, "apply")
            applied = AppliedDecision(decision=decision, source=DecisionSource.SERVER)
            tally.add(applied)
            cache.remember(event, decision)
            enforcement.note(event, decision)

    def apply_fallbacks(events: list[AccessEvent]) -> None:
        nonlocal ledger, fallback_events
        for event in events:
            applied = fallback_decision(event, cache)
            ledger = account_work(ledger, "apply")
            tally.add(applied)
            enforcement.note(event, applied.decision)
            fallback_events += 1

    def flush() -> None:
        nonlocal ledger, connected
        if not batch:
            return
        events = list(batch)
        batch.clear()
        if connected and sid is not None:
            for _ in events:
                ledger = account_work(ledger, "encode")
            try:
                connection.send(protocol.events_msg(sid, tuple(events)))
                reply = _await_type(connection, "decisions", config.decision_timeout_s, cache, sid)
            except ConnectionLost:
                reply = None
            if reply is None:
                connected = False
                apply_fallbacks(events)
            else:
                apply_server_decisions(events, reply.decisions or ())
        else:
            apply_fallbacks(events)

    for seq, scripted in enumerate(script, start=1):
        event = _to_event(scripted, device_id, seq)
        if enforcement.blocked(event):
            ledger = account_work(ledger, "apply")
            tally.add(_pre_blocked_decision(event, cache.policy_version))
            pre_blocked += 1
            continue
        ledger = account_work(ledger, "generate")
        batch.append(event)
        if len(batch) >= config.batch_size:
            flush()
    flush()

    if connected and sid is not None:
        try:
            connection.send(Message(t="bye", sid=sid))
        except ConnectionLost:
            pass

    stale = tally.sources.get(DecisionSource.CACHE_STALE.value, 0)
    return AgentRunReport(
        device_id=device_id,
        mode=Mode.OFFLOADED,
        events_emitted=len(script),
        verdicts=tally.verdicts,
        sources=tally.sources,
        pre_blocked=pre_blocked,
        stale=stale,
        fallback_events=fallback_events,
        policy_version=cache.policy_version,
        work=ledger,
    )


def _await_type(
    connection, expected: str, timeout_s: float, cache: FallbackCache, sid: str | None
) -> Message | None:
    """Wait for a message of the expected type, servicing pushed policy
    updates and heartbeat traffic that may arrive in between."""
    while True:
        msg = connection.recv(timeout_s)
        if msg is None:
            return None
        if msg.t == expected:
            return msg
        if msg.t == "policy_update":
            cache.policy_version = msg.version or cache.policy_version
            cache.policy_document = msg.policy
            if sid is not None:
                connection.send(protocol.policy_ack(sid, msg.version or 0))
            continue
        if msg.t in ("hb_ack", "hb"):
            continue
        if msg.t == "err":
            raise ConnectionLost(f"server error {msg.code}: {msg.detail}")
        return None


def _to_event(scripted: ScriptedEvent, device_id: str, seq: int) -> AccessEvent:
    return AccessEvent(
        event_seq=seq,
        device_id=device_id,
        app_id=scripted.app,
        resource=scripted.resource,
        action=scripted.action,
        app_state=scripted.app_state,
        at_ms=scripted.at_ms,
        payload_bytes=scripted.payload_bytes,
    )
