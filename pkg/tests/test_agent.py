from __future__ import annotations

import json
from collections import deque

import pytest

from seaas.agent import (
    AgentConfig,
    ConnectionLost,
    DecisionSource,
    FallbackCache,
    LedgerError,
    Mode,
    ScenarioError,
    ScriptedEvent,
    WorkLedger,
    account_work,
    fallback_decision,
    load_script,
    parse_script,
    run_scenario,
    step_cost,
    write_script,
)
from seaas.engine import SecurityEngine
from seaas.packs import default_policy_document, small_policy_document
from seaas.policy import Verdict
from seaas.resources import AccessEvent, Action, AppState, Resource
from seaas.server import ProtocolService


def _scripted(at_ms=1000, app="com.maps.nav", resource=Resource.GPS, action=Action.READ,
              state=AppState.FOREGROUND, label="benign", payload=16) -> ScriptedEvent:
    return ScriptedEvent(at_ms=at_ms, app=app, resource=resource, action=action,
                         app_state=state, payload_bytes=payload, label=label)


def _access(resource=Resource.MICROPHONE, app="com.x.y", action=Action.READ,
            state=AppState.FOREGROUND, seq=1) -> AccessEvent:
    return AccessEvent(event_seq=seq, device_id="dev1", app_id=app, resource=resource,
                       action=action, app_state=state, at_ms=1000, payload_bytes=1)


class LoopbackConnection:
    """Drives the protocol service in-process; can sever itself mid-run."""

    def __init__(self, service: ProtocolService, fail_after_sends: int | None = None):
        self.service = service
        self.inbox: deque = deque()
        self.sends = 0
        self.fail_after = fail_after_sends

    def send(self, msg) -> None:
        self.sends += 1
        if self.fail_after is not None and self.sends > self.fail_after:
            raise ConnectionLost("severed")
        reply = self.service.handle_message(msg, sender=self.inbox.append)
        self.inbox.append(reply)

    def recv(self, timeout_s: float):
        if not self.inbox:
            return None
        return self.inbox.popleft()

    def close(self) -> None:
        pass


@pytest.fixture
def fresh_service():
    def make(policy_document: str | None = None) -> ProtocolService:
        engine = SecurityEngine.fresh(policy_document=policy_document)
        return ProtocolService(engine)

    return make


# --------------------------------------------------------------------------
# Scripts

def test_script_roundtrip(tmp_path):
    events = [_scripted(at_ms=1000), _scripted(at_ms=2000, label="threat:POLICY_VIOLATION")]
    path = tmp_path / "s.jsonl"
    write_script(path, events)
    assert load_script(path) == events


def test_script_rejects_bad_label_and_order():
    good = json.dumps(_scripted().to_wire())
    bad_label = json.dumps({**_scripted().to_wire(), "label": "threat:MARTIANS"})
    with pytest.raises(ScenarioError):
        parse_script([good, bad_label])
    later = json.dumps(_scripted(at_ms=5000).to_wire())
    earlier = json.dumps(_scripted(at_ms=100).to_wire())
    with pytest.raises(ScenarioError):
        parse_script([later, earlier])


def test_malformed_script_fails_before_any_event(fresh_service):
    script = [_scripted(at_ms=1000), ScriptedEvent(
        at_ms=2000, app="com.x", resource=Resource.GPS, action=Action.READ,
        app_state=AppState.FOREGROUND, payload_bytes=1, label="oops")]
    service = fresh_service()
    conn = LoopbackConnection(service)
    with pytest.raises(ScenarioError):
        run_scenario(script, Mode.OFFLOADED, conn, device_id="dev1")
    assert service.engine.last_seq_for("dev1") == 0
    service.engine.close()


# --------------------------------------------------------------------------
# Work accounting

def test_step_costs():
    assert step_cost("generate") == 1
    assert step_cost("window") == 2
    assert step_cost("encode") == 2
    assert step_cost("apply") == 1
    assert step_cost("evaluate", 64) == 20
    assert step_cost("evaluate", 0) == 4
    assert step_cost("evaluate", 1) == 5
    with pytest.raises(LedgerError):
        step_cost("daydream")


def test_account_work_is_pure_and_sums():
    ledger = WorkLedger(mode=Mode.LOCAL)
    after = account_work(ledger, "generate")
    after = account_work(after, "evaluate", 64)
    after = account_work(after, "window")
    assert ledger.total == 0 and ledger.breakdown == {}
    assert after.total == 23
    assert after.breakdown == {"generate": 1, "evaluate": 20, "window": 2}
    assert sum(after.breakdown.values()) == after.total


def test_empty_script_costs_nothing(fresh_service):
    service = fresh_service()
    conn = LoopbackConnection(service)
    report = run_scenario([], Mode.OFFLOADED, conn, device_id="dev1")
    assert report.events_emitted == 0
    assert report.work.total == 0
    local = run_scenario([], Mode.LOCAL, device_id="dev1")
    assert local.work.total == 0
    service.engine.close()


def test_local_single_event_with_64_rules_costs_23():
    report = run_scenario([_scripted()], Mode.LOCAL, device_id="dev1",
                          policy_document=default_policy_document())
    assert report.work.total == 23
    assert report.work.breakdown == {"generate": 1, "evaluate": 20, "window": 2}


def test_offloaded_single_event_costs_4(fresh_service):
    service = fresh_service()
    conn = LoopbackConnection(service)
    report = run_scenario([_scripted()], Mode.OFFLOADED, conn, device_id="dev1")
    assert report.work.total == 4
    assert report.work.breakdown == {"generate": 1, "encode": 2, "apply": 1}
    service.engine.close()


# --------------------------------------------------------------------------
# Fallback decisions

def test_fallback_fails_closed_on_critical():
    applied = fallback_decision(_access(resource=Resource.MICROPHONE), FallbackCache())
    assert applied.decision.verdict == Verdict.DENY
    assert applied.decision.matched_rule_id == "FALLBACK_DEFAULT"
    assert applied.source == DecisionSource.FALLBACK_DEFAULT


def test_fallback_allows_normal_resources():
    applied = fallback_decision(_access(resource=Resource.ACCELEROMETER), FallbackCache())
    assert applied.decision.verdict == Verdict.ALLOW


def test_fallback_reuses_cache_flagged_stale():
    cache = FallbackCache(policy_version=7)
    event = _access(resource=Resource.CONTACTS, app="com.spy.x", state=AppState.BACKGROUND)
    from seaas.policy import Decision

    cache.remember(event, Decision(device_id="dev1", event_seq=1, verdict=Verdict.DENY,
                                   matched_rule_id="r-block", policy_version=7))
    applied = fallback_decision(
        _access(resource=Resource.CONTACTS, app="com.spy.x", state=AppState.BACKGROUND, seq=9),
        cache,
    )
    assert applied.decision.verdict == Verdict.DENY
    assert applied.stale is True
    assert applied.decision.event_seq == 9


# --------------------------------------------------------------------------
# Determinism

def test_offloaded_report_is_byte_identical_across_runs(fresh_service):
    script = [
        _scripted(at_ms=1000),
        _scripted(at_ms=2000, app="com.game.puzzle", resource=Resource.MICROPHONE,
                  action=Action.RECORD, label="threat:POLICY_VIOLATION"),
        _scripted(at_ms=3000, app="com.cal.plan", resource=Resource.CALENDAR),
    ]
    reports = []
    for _ in range(2):
        service = fresh_service()
        conn = LoopbackConnection(service)
        reports.append(run_scenario(script, Mode.OFFLOADED, conn, device_id="dev1").to_json())
        service.engine.close()
    assert reports[0] == reports[1]

    local = [run_scenario(script, Mode.LOCAL, device_id="dev1").to_json() for _ in range(2)]
    assert local[0] == local[1]


# --------------------------------------------------------------------------
# Enforcement

def test_repeat_of_denied_access_is_pre_blocked(fresh_service):
    script = [
        _scripted(at_ms=1000, app="com.game.puzzle", resource=Resource.MICROPHONE,
                  action=Action.RECORD, label="threat:POLICY_VIOLATION"),
        _scripted(at_ms=2000, app="com.game.puzzle", resource=Resource.MICROPHONE,
                  action=Action.RECORD, label="benign"),
        _scripted(at_ms=3000, app="com.game.puzzle", resource=Resource.MICROPHONE,
                  action=Action.RECORD, label="benign"),
    ]
    service = fresh_service()
    conn = LoopbackConnection(service)
    # one event per round trip so the deny lands before the repeats
    report = run_scenario(script, Mode.OFFLOADED, conn, device_id="dev1",
                          config=AgentConfig(batch_size=1))
    assert report.events_emitted == 3
    assert report.pre_blocked == 2
    # only the first event reached the server
    assert service.engine.last_seq_for("dev1") == 1
    # first event: generate+encode+apply = 4; repeats: apply only
    assert report.work.total == 4 + 1 + 1
    service.engine.close()


def test_quarantine_blocks_whole_app_on_device(fresh_service):
    spy = "com.bgsync.cloud"
    script = (
        [_scripted(at_ms=1000 + i, app=spy, resource=r, state=AppState.BACKGROUND,
                   label="threat:BACKGROUND_EXFILTRATION")
         for i, r in enumerate([Resource.CONTACTS, Resource.PHOTOS, Resource.SMS])]
        + [_scripted(at_ms=5000, app=spy, resource=Resource.CALENDAR, label="benign"),
           _scripted(at_ms=6000, app=spy, resource=Resource.GYROSCOPE, label="benign")]
    )
    service = fresh_service()
    conn = LoopbackConnection(service)
    report = run_scenario(script, Mode.OFFLOADED, conn, device_id="dev1",
                          config=AgentConfig(batch_size=1))
    assert report.pre_blocked == 2  # everything after the quarantine decision
    assert service.engine.last_seq_for("dev1") == 3
    service.engine.close()


def test_pre_blocking_applies_in_local_mode_too():
    script = [
        _scripted(at_ms=1000, app="com.game.puzzle", resource=Resource.MICROPHONE,
                  action=Action.RECORD, label="threat:POLICY_VIOLATION"),
        _scripted(at_ms=2000, app="com.game.puzzle", resource=Resource.MICROPHONE,
                  action=Action.RECORD, label="benign"),
    ]
    report = run_scenario(script, Mode.LOCAL, device_id="dev1",
                          policy_document=default_policy_document())
    assert report.pre_blocked == 1
    assert report.work.total == 23 + 1


# --------------------------------------------------------------------------
# Severed connection / fail-closed

def test_fail_closed_when_connection_severed(fresh_service):
    script = [
        _scripted(at_ms=1000, app="com.voice.memo", resource=Resource.MICROPHONE,
                  action=Action.RECORD),                       # granted while online
        _scripted(at_ms=2000, app="com.voice.memo", resource=Resource.MICROPHONE,
                  action=Action.RECORD),                       # offline: cached, stale
        _scripted(at_ms=3000, app="com.new.app", resource=Resource.CONTACTS),   # offline: fail closed
        _scripted(at_ms=4000, app="com.new.app", resource=Resource.CALENDAR),   # offline: normal, allowed
    ]
    service = fresh_service()
    # batch_size=1 so each event is its own round trip; allow 2 sends (hello + first batch)
    conn = LoopbackConnection(service, fail_after_sends=2)
    report = run_scenario(script, Mode.OFFLOADED, conn, device_id="dev1",
                          config=AgentConfig(batch_size=1))
    assert report.fallback_events == 3
    assert report.stale == 1
    assert report.verdicts["DENY"] == 1          # the uncached critical access
    assert report.verdicts["ALLOW"] >= 2         # online grant + offline normal
    # nothing critical was allowed without a cache entry
    assert report.sources.get("FALLBACK_DEFAULT", 0) == 2
    service.engine.close()


def test_no_critical_allow_without_cache_when_offline(fresh_service):
    critical = [Resource.MICROPHONE, Resource.GPS, Resource.CONTACTS, Resource.SMS]
    script = [_scripted(at_ms=1000 + i, app="com.unseen.app", resource=r) for i, r in enumerate(critical)]
    service = fresh_service()
    conn = LoopbackConnection(service, fail_after_sends=0)  # dies instantly
    report = run_scenario(script, Mode.OFFLOADED, conn, device_id="dev1")
    assert report.verdicts.get("ALLOW", 0) == 0
    assert report.verdicts["DENY"] == len(critical)
    service.engine.close()


# --------------------------------------------------------------------------
# Offloading efficiency invariants

def _mixed_script(n: int = 40) -> list[ScriptedEvent]:
    out = []
    for i in range(n):
        if i % 7 == 3:
            out.append(_scripted(at_ms=1000 * i + 1000, app="com.game.puzzle",
                                 resource=Resource.MICROPHONE, action=Action.RECORD,
                                 label="threat:POLICY_VIOLATION"))
        else:
            out.append(_scripted(at_ms=1000 * i + 1000))
    return out


@pytest.mark.parametrize("rules_count", [16, 32, 64])
def test_offloaded_beats_local_from_16_rules_up(fresh_service, rules_count):
    document = small_policy_document(rules_count)
    script = _mixed_script()
    service = fresh_service(document)
    conn = LoopbackConnection(service)
    offloaded = run_scenario(script, Mode.OFFLOADED, conn, device_id="dev1")
    local = run_scenario(script, Mode.LOCAL, device_id="dev1", policy_document=document)
    assert offloaded.work.total < local.work.total
    if rules_count >= 64:
        assert offloaded.work.total <= 0.25 * local.work.total
    service.engine.close()
