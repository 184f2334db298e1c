"""The cloud-side core: one engine owning the active policy, window states,
decision/threat stores, and the quarantine set, with every state change
journaled to the event log so a crash never loses a committed decision.

Per-device event order is the caller's job (the protocol layer serializes by
session); everything here runs under one writer lock, and reads see committed
snapshots.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

from .detection import (
    DEFAULT_CONFIG,
    DetectionConfig,
    MitigationKind,
    Severity,
    ThreatReport,
    ThreatStatus,
    WindowState,
    detect,
    mitigate,
    monitor_update,
)
from .eventlog import EventLog, RecordKind, read_log, read_snapshot, write_snapshot
from .packs import default_policy_document
from .policy import (
    QUARANTINE_RULE_ID,
    Constraints,
    Decision,
    PolicyRule,
    PolicySet,
    RuleDecision,
    Verdict,
    apply_update,
    evaluate,
    parse_policy_document,
    serialize_policy_document,
    with_rule_replaced,
    parse_constraints,
)
from .resources import (
    AccessEvent,
    DeviceDescriptor,
    EventStatus,
    InventoryMismatch,
    MalformedEvent,
    Resource,
    resource_from_name,
    valid_app_id,
    validate_event,
)

logger = logging.getLogger(__name__)

QUICK_RULE_PRIORITY = 10_000  # above the conventional admin range 0..9999


class BatchError(Exception):
    """A rejected event batch; the whole batch is refused atomically."""

    def __init__(self, code: str, detail: str):
        super().__init__(f"{code}: {detail}")
        self.code = code
        self.detail = detail


class PermissionRejected(Exception):
    """A rejected permission change (unknown resource, bad verdict, ...)."""


def _now_ms() -> int:
    return int(time.time() * 1000)


@dataclass
class _FeedCounters:
    threats: int = 0
    decisions: int = 0
    events: dict[str, int] = field(default_factory=dict)


class SecurityEngine:
    def __init__(
        self,
        config: DetectionConfig = DEFAULT_CONFIG,
        clock: Callable[[], int] = _now_ms,
        snapshot_every: int | None = None,
    ):
        self.config = config
        self.clock = clock
        self.snapshot_every = snapshot_every
        self.on_policy_change: Callable[[int, str], None] | None = None

        self._lock = threading.RLock()
        self._log: EventLog | None = None
        self._data_dir: Path | None = None
        self._records_since_snapshot = 0

        self.devices: dict[str, DeviceDescriptor] = {}
        self.policy_history: dict[int, PolicySet] = {}
        self.active_policy: PolicySet | None = None
        self.decisions: dict[tuple[str, int], Decision] = {}
        self.decision_feed: list[tuple[int, Decision, AccessEvent]] = []
        self.threats: dict[str, ThreatReport] = {}
        self.threat_feed: list[tuple[int, ThreatReport]] = []
        self.events_feed: dict[str, list[tuple[int, AccessEvent]]] = {}
        self.windows: dict[tuple[str, str, Resource], WindowState] = {}
        self.quarantine: dict[tuple[str, str], int] = {}
        self.high_counts: dict[tuple[str, str], int] = {}
        self.device_last_seq: dict[str, int] = {}
        self.device_last_at: dict[str, int] = {}
        self.trial_reports: list[dict] = []
        self._counters = _FeedCounters()

    # ------------------------------------------------------------------
    # Construction

    @classmethod
    def fresh(
        cls,
        data_dir: Path | None = None,
        policy_document: str | None = None,
        config: DetectionConfig = DEFAULT_CONFIG,
        clock: Callable[[], int] = _now_ms,
        snapshot_every: int | None = None,
    ) -> "SecurityEngine":
        engine = cls(config=config, clock=clock, snapshot_every=snapshot_every)
        if data_dir is not None:
            engine._data_dir = Path(data_dir)
            engine._log = EventLog(engine._data_dir, start_seq=0)
        document = policy_document if policy_document is not None else default_policy_document()
        parsed = parse_policy_document(document)
        initial = PolicySet(version=1, rules=parsed.rules, defaults=parsed.defaults)
        engine._commit_policy(initial, notify=False)
        return engine

    @classmethod
    def recover(
        cls,
        data_dir: Path,
        policy_document: str | None = None,
        config: DetectionConfig = DEFAULT_CONFIG,
        clock: Callable[[], int] = _now_ms,
        snapshot_every: int | None = None,
    ) -> "SecurityEngine":
        """Rebuild from snapshot + log; falls back to a fresh engine when the
        data directory holds no state yet."""
        data_dir = Path(data_dir)
        snapshot = read_snapshot(data_dir)
        after = snapshot["log_seq"] if snapshot else 0
        records = read_log(data_dir, after_seq=after)
        if snapshot is None and not records:
            return cls.fresh(
                data_dir=data_dir,
                policy_document=policy_document,
                config=config,
                clock=clock,
                snapshot_every=snapshot_every,
            )
        engine = cls(config=config, clock=clock, snapshot_every=snapshot_every)
        engine._data_dir = data_dir
        if snapshot is not None:
            engine._load_snapshot(snapshot)
        engine._replay(records)
        last_seq = records[-1].seq if records else after
        engine._log = EventLog(data_dir, start_seq=last_seq)
        return engine

    def close(self) -> None:
        if self._log is not None:
            self._log.close()

    # ------------------------------------------------------------------
    # Policy management

    @property
    def policy_version(self) -> int:
        assert self.active_policy is not None
        return self.active_policy.version

    def active_policy_document(self) -> str:
        with self._lock:
            assert self.active_policy is not None
            return serialize_policy_document(self.active_policy)

    def policy_document_for(self, version: int) -> str | None:
        with self._lock:
            pset = self.policy_history.get(version)
            return serialize_policy_document(pset) if pset else None

    def apply_policy_document(self, text: str) -> int:
        """Replace the active policy; rejection leaves the active version
        unchanged (parse errors propagate before any state moves)."""
        with self._lock:
            assert self.active_policy is not None
            new = apply_update(self.active_policy, text)
            self._commit_policy(new)
            return new.version

    def set_permission(
        self,
        device_id: str,
        app_id: str,
        resource_name: str,
        verdict: str,
        constraints: dict | None = None,
    ) -> int:
        """Synthesize a high-priority quick rule from a permission toggle.

        The rule id encodes (device, app, resource) so repeated toggles
        replace rather than pile up; last write wins by version order.
        """
        resource = resource_from_name(resource_name)  # UnknownResource propagates
        if not valid_app_id(app_id):
            raise PermissionRejected(f"malformed app id: {app_id!r}")
        if not device_id:
            raise PermissionRejected("device_id must be non-empty")
        try:
            decision = RuleDecision(verdict)
        except ValueError:
            raise PermissionRejected(f"verdict must be GRANT, DENY, or SELECTIVE: {verdict!r}") from None
        parsed_constraints: Constraints | None = None
        if decision == RuleDecision.SELECTIVE:
            if not constraints:
                raise PermissionRejected("SELECTIVE requires constraints")
            parsed_constraints = parse_constraints(constraints, where="permission")
            if parsed_constraints.is_empty():
                raise PermissionRejected("SELECTIVE requires non-empty constraints")
        elif constraints:
            raise PermissionRejected("constraints are only valid with SELECTIVE")
        rule = PolicyRule(
            rule_id=f"user:{device_id}:{app_id}:{resource.value}",
            priority=QUICK_RULE_PRIORITY,
            app_selector=app_id,
            resource_selector=resource.value,
            action_selector="*",
            decision=decision,
            constraints=parsed_constraints,
        )
        with self._lock:
            assert self.active_policy is not None
            new = with_rule_replaced(self.active_policy, rule)
            self._commit_policy(new)
            return new.version

    def lift_quarantine(self, device_id: str, app_id: str) -> bool:
        with self._lock:
            if (device_id, app_id) not in self.quarantine:
                return False
            del self.quarantine[(device_id, app_id)]
            self._append(
                RecordKind.QUARANTINE,
                {"device": device_id, "app": app_id, "action": "lift"},
            )
            return True

    def _commit_policy(self, pset: PolicySet, notify: bool = True) -> None:
        document = serialize_policy_document(pset)
        self.policy_history[pset.version] = pset
        self.active_policy = pset
        self._append(RecordKind.POLICY_CHANGE, {"version": pset.version, "document": document})
        if notify and self.on_policy_change is not None:
            self.on_policy_change(pset.version, document)

    # ------------------------------------------------------------------
    # Event processing

    def register_device(self, descriptor: DeviceDescriptor) -> None:
        with self._lock:
            self.devices[descriptor.device_id] = descriptor

    def last_seq_for(self, device_id: str) -> int:
        with self._lock:
            return self.device_last_seq.get(device_id, 0)

    def process_batch(self, device_id: str, events: Sequence[AccessEvent]) -> list[Decision]:
        """Decide a batch; rejected batches change nothing. Duplicate events
        return their stored decisions unchanged (exactly-once semantics)."""
        with self._lock:
            device = self.devices.get(device_id)
            if device is None:
                raise BatchError("no_session", f"device {device_id!r} not registered")
            self._validate_batch(device, events)
            out: list[Decision] = []
            for event in events:
                stored = self.decisions.get((device_id, event.event_seq))
                if stored is not None:
                    out.append(stored)
                else:
                    out.append(self._process_new_event(event))
            return out

    def _validate_batch(self, device: DeviceDescriptor, events: Sequence[AccessEvent]) -> None:
        last_seq = self.device_last_seq.get(device.device_id, 0)
        last_at = self.device_last_at.get(device.device_id, 0)
        prev_seq: int | None = None
        for event in events:
            if event.device_id != device.device_id:
                raise BatchError(
                    "bad_batch", f"event seq {event.event_seq} names device {event.device_id!r}"
                )
            if prev_seq is not None and event.event_seq <= prev_seq:
                raise BatchError(
                    "bad_batch", f"event seqs out of order: {event.event_seq} after {prev_seq}"
                )
            prev_seq = event.event_seq
            try:
                status, _ = validate_event(event, device, last_seq)
            except InventoryMismatch as exc:
                raise BatchError("bad_event", str(exc)) from None
            except MalformedEvent as exc:
                raise BatchError("bad_event", str(exc)) from None
            if status == EventStatus.DUPLICATE:
                if (device.device_id, event.event_seq) not in self.decisions:
                    raise BatchError(
                        "bad_batch",
                        f"duplicate seq {event.event_seq} has no stored decision",
                    )
            else:
                if event.at_ms < last_at:
                    raise BatchError(
                        "bad_batch",
                        f"event seq {event.event_seq} moves device time backwards",
                    )
                last_at = event.at_ms

    def _process_new_event(self, event: AccessEvent) -> Decision:
        assert self.active_policy is not None
        pset = self.active_policy
        now = self.clock()
        pair = (event.device_id, event.app_id)
        wkey = (event.device_id, event.app_id, event.resource)
        ws = self.windows.get(wkey)
        if ws is None:
            ws = WindowState(key=wkey, horizon_s=self.config.horizon_s)
            self.windows[wkey] = ws
        _, frequency_count = monitor_update(ws, event, self.config)

        quarantined_after = self.quarantine.get(pair)
        if quarantined_after is not None and event.event_seq > quarantined_after:
            decision = Decision(
                device_id=event.device_id,
                event_seq=event.event_seq,
                verdict=Verdict.DENY,
                matched_rule_id=QUARANTINE_RULE_ID,
                policy_version=pset.version,
            )
        else:
            counts: dict[str, int] = {}
            for rule in pset.eval_order:
                if rule.when is not None and rule.when.max_per_window is not None:
                    counts[rule.rule_id] = ws.count_within(
                        rule.when.max_per_window.window_s, event.at_ms
                    )
            decision = evaluate(pset, event, counts)

        threat = detect(event, decision, frequency_count, pset, now_ms=now, config=self.config)
        final_threat: ThreatReport | None = None
        fresh_threat = False
        if threat is not None:
            existing = self.threats.get(threat.threat_id)
            if existing is not None:
                # Replay after a partial crash: reuse the stored report.
                final_threat = existing
            else:
                history = self.high_counts.get(pair, 0)
                action = mitigate(threat, history, self.config)
                final_threat = replace(threat, status=ThreatStatus.MITIGATED, mitigation=action)
                fresh_threat = True
        if final_threat is not None:
            decision = replace(decision, mitigation=final_threat.mitigation)

        # Journal order matters for recovery: the decision record commits the
        # event; anything logged before it is redone idempotently on replay.
        self._append(RecordKind.EVENT, event.to_wire())
        self._counters.events[event.device_id] = self._counters.events.get(event.device_id, 0) + 1
        self.events_feed.setdefault(event.device_id, []).append(
            (self._counters.events[event.device_id], event)
        )
        if fresh_threat:
            assert final_threat is not None
            self.threats[final_threat.threat_id] = final_threat
            self._counters.threats += 1
            self.threat_feed.append((self._counters.threats, final_threat))
            self._append(RecordKind.THREAT, final_threat.to_wire())
            if final_threat.severity == Severity.HIGH:
                self.high_counts[pair] = self.high_counts.get(pair, 0) + 1
        if (
            final_threat is not None
            and final_threat.mitigation.kind == MitigationKind.QUARANTINE_APP
            and self.quarantine.get(pair) != event.event_seq
        ):
            self.quarantine[pair] = event.event_seq
            self._append(
                RecordKind.QUARANTINE,
                {
                    "device": event.device_id,
                    "app": event.app_id,
                    "action": "apply",
                    "after_seq": event.event_seq,
                    "threat_id": final_threat.threat_id,
                },
            )
        self.decisions[(event.device_id, event.event_seq)] = decision
        self._counters.decisions += 1
        self.decision_feed.append((self._counters.decisions, decision, event))
        self._append(
            RecordKind.DECISION, {"event": event.to_wire(), "decision": decision.to_wire()}
        )
        self.device_last_seq[event.device_id] = event.event_seq
        self.device_last_at[event.device_id] = event.at_ms
        return decision

    # ------------------------------------------------------------------
    # Feeds (admin views)

    def threats_since(self, cursor: int, limit: int = 500) -> tuple[list[dict], int]:
        return self._page(self.threat_feed, cursor, limit, lambda t: t.to_wire())

    def decisions_since(self, cursor: int, limit: int = 500) -> tuple[list[dict], int]:
        def encode(pair: tuple[Decision, AccessEvent]) -> dict:
            decision, event = pair
            wire = decision.to_wire()
            # event context lets a consumer build views without re-evaluating
            wire.update(
                app=event.app_id,
                resource=event.resource.value,
                action=event.action.value,
                state=event.app_state.value,
                at_ms=event.at_ms,
            )
            return wire

        feed = [(seq, (d, e)) for seq, d, e in self.decision_feed]
        return self._page(feed, cursor, limit, encode)

    def events_since(self, device_id: str, cursor: int, limit: int = 500) -> tuple[list[dict], int]:
        feed = self.events_feed.get(device_id, [])
        return self._page(feed, cursor, limit, lambda e: e.to_wire())

    def _page(self, feed, cursor: int, limit: int, encode) -> tuple[list[dict], int]:
        if cursor < 0:
            raise ValueError("cursor must be non-negative")
        limit = min(limit, 500)
        with self._lock:
            items = []
            next_cursor = cursor
            for seq, item in feed:
                if seq <= cursor:
                    continue
                items.append(encode(item))
                next_cursor = seq
                if len(items) >= limit:
                    break
            return items, next_cursor

    def device_summaries(self) -> list[dict]:
        with self._lock:
            ids = sorted(set(self.devices) | set(self.device_last_seq))
            out = []
            for device_id in ids:
                descriptor = self.devices.get(device_id)
                out.append(
                    {
                        "device_id": device_id,
                        "resources": sorted(r.value for r in descriptor.resources)
                        if descriptor
                        else None,
                        "agent_version": descriptor.agent_version if descriptor else None,
                        "last_seq": self.device_last_seq.get(device_id, 0),
                    }
                )
            return out

    def quarantined_pairs(self) -> list[tuple[str, str]]:
        with self._lock:
            return sorted(self.quarantine)

    def record_trial_report(self, report: dict) -> None:
        with self._lock:
            self.trial_reports.append(report)

    # ------------------------------------------------------------------
    # Persistence

    def _append(self, kind: RecordKind, payload: dict) -> None:
        if self._log is None:
            return
        self._log.append(kind, payload, self.clock())
        self._records_since_snapshot += 1
        if self.snapshot_every is not None and self._records_since_snapshot >= self.snapshot_every:
            self.write_snapshot_now()

    def write_snapshot_now(self) -> None:
        if self._data_dir is None or self._log is None:
            return
        write_snapshot(self._data_dir, self._snapshot_dict())
        self._records_since_snapshot = 0

    def _snapshot_dict(self) -> dict:
        assert self._log is not None
        return {
            "log_seq": self._log.seq,
            "active_version": self.policy_version,
            "policies": {
                str(v): serialize_policy_document(p) for v, p in self.policy_history.items()
            },
            "decisions": [[seq, d.to_wire(), e.to_wire()] for seq, d, e in self.decision_feed],
            "threats": [[seq, t.to_wire()] for seq, t in self.threat_feed],
            "events": {
                device: [[seq, e.to_wire()] for seq, e in feed]
                for device, feed in self.events_feed.items()
            },
            "windows": [
                [d, a, r.value, list(ws.stamps)] for (d, a, r), ws in self.windows.items()
            ],
            "quarantine": [[d, a, after] for (d, a), after in self.quarantine.items()],
            "high_counts": [[d, a, n] for (d, a), n in self.high_counts.items()],
            "device_last_seq": dict(self.device_last_seq),
            "device_last_at": dict(self.device_last_at),
        }

    def _load_snapshot(self, snap: dict) -> None:
        for v, document in snap["policies"].items():
            pset = parse_policy_document(document)
            self.policy_history[int(v)] = pset
        self.active_policy = self.policy_history[snap["active_version"]]
        for seq, wire, event_wire in snap["decisions"]:
            decision = Decision.from_wire(wire)
            self.decisions[(decision.device_id, decision.event_seq)] = decision
            self.decision_feed.append((seq, decision, AccessEvent.from_wire(event_wire)))
            self._counters.decisions = max(self._counters.decisions, seq)
        for seq, wire in snap["threats"]:
            threat = ThreatReport.from_wire(wire)
            self.threats[threat.threat_id] = threat
            self.threat_feed.append((seq, threat))
            self._counters.threats = max(self._counters.threats, seq)
        for device, feed in snap["events"].items():
            for seq, wire in feed:
                self.events_feed.setdefault(device, []).append((seq, AccessEvent.from_wire(wire)))
                self._counters.events[device] = max(self._counters.events.get(device, 0), seq)
        for d, a, rname, stamps in snap["windows"]:
            resource = resource_from_name(rname)
            ws = WindowState(key=(d, a, resource), horizon_s=self.config.horizon_s)
            ws.stamps.extend(stamps)
            self.windows[(d, a, resource)] = ws
        for d, a, after in snap["quarantine"]:
            self.quarantine[(d, a)] = after
        for d, a, n in snap["high_counts"]:
            self.high_counts[(d, a)] = n
        self.device_last_seq.update(snap["device_last_seq"])
        self.device_last_at.update(snap["device_last_at"])

    def _replay(self, records) -> None:
        decided: set[tuple[str, int]] = {
            (r.payload["decision"]["device"], r.payload["decision"]["seq"])
            for r in records
            if r.kind == RecordKind.DECISION
        } | set(self.decisions)
        orphans = 0
        for record in records:
            payload = record.payload
            if record.kind == RecordKind.POLICY_CHANGE:
                pset = parse_policy_document(payload["document"])
                self.policy_history[pset.version] = pset
                if self.active_policy is None or pset.version > self.active_policy.version:
                    self.active_policy = pset
            elif record.kind == RecordKind.EVENT:
                key = (payload["device"], payload["seq"])
                if key not in decided:
                    orphans += 1
                    continue
                event = AccessEvent.from_wire(payload)
                self._counters.events[event.device_id] = (
                    self._counters.events.get(event.device_id, 0) + 1
                )
                self.events_feed.setdefault(event.device_id, []).append(
                    (self._counters.events[event.device_id], event)
                )
            elif record.kind == RecordKind.THREAT:
                threat = ThreatReport.from_wire(payload)
                if threat.threat_id in self.threats:
                    continue
                self.threats[threat.threat_id] = threat
                self._counters.threats += 1
                self.threat_feed.append((self._counters.threats, threat))
                if threat.severity == Severity.HIGH:
                    pair = (threat.device_id, threat.app_id)
                    self.high_counts[pair] = self.high_counts.get(pair, 0) + 1
            elif record.kind == RecordKind.QUARANTINE:
                pair = (payload["device"], payload["app"])
                if payload["action"] == "apply":
                    self.quarantine[pair] = payload["after_seq"]
                else:
                    self.quarantine.pop(pair, None)
            elif record.kind == RecordKind.DECISION:
                event = AccessEvent.from_wire(payload["event"])
                decision = Decision.from_wire(payload["decision"])
                wkey = (event.device_id, event.app_id, event.resource)
                ws = self.windows.get(wkey)
                if ws is None:
                    ws = WindowState(key=wkey, horizon_s=self.config.horizon_s)
                    self.windows[wkey] = ws
                monitor_update(ws, event, self.config)
                self.decisions[(event.device_id, event.event_seq)] = decision
                self._counters.decisions += 1
                self.decision_feed.append((self._counters.decisions, decision, event))
                self.device_last_seq[event.device_id] = max(
                    self.device_last_seq.get(event.device_id, 0), event.event_seq
                )
                self.device_last_at[event.device_id] = max(
                    self.device_last_at.get(event.device_id, 0), event.at_ms
                )
        if orphans:
            logger.warning("dropped %d uncommitted event records during recovery", orphans)
        if self.active_policy is None:
            raise RuntimeError("recovery found no policy change records")


def recover_state(data_dir: Path, **kwargs) -> SecurityEngine:
    """Rebuild a service engine from its data directory."""
    return SecurityEngine.recover(Path(data_dir), **kwargs)
