from __future__ import annotations

import json

import pytest
import requests

from seaas.admin import AdminServer
from seaas.engine import SecurityEngine
from seaas.resources import AccessEvent, Action, AppState, Resource, full_device
from seaas.server import ProtocolService

EMPTY_DOC = json.dumps(
    {"version": 1, "defaults": {"CRITICAL": "DENY", "NORMAL": "GRANT"}, "rules": []}
)


@pytest.fixture
def admin():
    engine = SecurityEngine.fresh()
    engine.register_device(full_device("dev1"))
    service = ProtocolService(engine)
    server = AdminServer(("127.0.0.1", 0), engine, service)
    server.start()
    base = f"http://127.0.0.1:{server.server_address[1]}"
    yield base, engine
    server.stop()
    engine.close()


def _event(seq, app="com.game.puzzle", resource=Resource.MICROPHONE) -> AccessEvent:
    return AccessEvent(
        event_seq=seq, device_id="dev1", app_id=app, resource=resource,
        action=Action.RECORD, app_state=AppState.FOREGROUND, at_ms=seq * 1000, payload_bytes=1,
    )


def test_threats_empty_then_populated(admin):
    base, engine = admin
    r = requests.get(f"{base}/threats?since=0", timeout=5)
    assert r.status_code == 200
    assert r.json() == {"items": [], "cursor": 0}

    for seq in range(1, 4):
        engine.process_batch("dev1", [_event(seq, resource=[Resource.MICROPHONE, Resource.GPS, Resource.CONTACTS][seq - 1])])
    r = requests.get(f"{base}/threats?since=0", timeout=5).json()
    assert len(r["items"]) >= 1
    assert r["cursor"] == len(r["items"])
    again = requests.get(f"{base}/threats?since=0", timeout=5).json()
    assert again == r
    tail = requests.get(f"{base}/threats?since={r['cursor']}", timeout=5).json()
    assert tail["items"] == []
    assert tail["cursor"] == r["cursor"]


def test_put_policies_bumps_version(admin):
    base, engine = admin
    r = requests.get(f"{base}/policies", timeout=5).json()
    assert r["version"] == 1
    resp = requests.put(f"{base}/policies", data=EMPTY_DOC.encode(), timeout=5)
    assert resp.status_code == 200
    assert resp.json() == {"version": 2}
    assert engine.policy_version == 2


def test_put_policies_duplicate_rule_is_422_with_line(admin):
    base, engine = admin
    doc = (
        '{\n'
        '  "version": 1,\n'
        '  "defaults": {"CRITICAL": "DENY", "NORMAL": "GRANT"},\n'
        '  "rules": [\n'
        '    {"id": "dup", "priority": 1, "app": "*", "resource": "*", "action": "*", "decision": "DENY"},\n'
        '    {"id": "dup", "priority": 2, "app": "*", "resource": "*", "action": "*", "decision": "DENY"}\n'
        '  ]\n'
        '}\n'
    )
    resp = requests.put(f"{base}/policies", data=doc.encode(), timeout=5)
    assert resp.status_code == 422
    detail = resp.json()["error"]
    assert detail["kind"] == "DuplicateRule"
    assert detail["line"] == 6
    assert engine.policy_version == 1


def test_post_permissions_and_validation(admin):
    base, engine = admin
    body = {"device_id": "dev1", "app_id": "com.x.y", "resource": "MICROPHONE", "verdict": "DENY"}
    resp = requests.post(f"{base}/permissions", json=body, timeout=5)
    assert resp.status_code == 200
    assert resp.json() == {"version": 2}

    bad = {**body, "resource": "TOASTER"}
    resp = requests.post(f"{base}/permissions", json=bad, timeout=5)
    assert resp.status_code == 400
    assert engine.policy_version == 2

    resp = requests.post(f"{base}/permissions", data=b"{not json", timeout=5)
    assert resp.status_code == 400


def test_devices_and_event_feed(admin):
    base, engine = admin
    engine.process_batch("dev1", [_event(1, app="com.maps.nav", resource=Resource.GPS)])
    devices = requests.get(f"{base}/devices", timeout=5).json()["devices"]
    assert devices[0]["device_id"] == "dev1"
    assert devices[0]["last_seq"] == 1
    assert devices[0]["connected"] is False
    feed = requests.get(f"{base}/devices/dev1/events?since=0", timeout=5).json()
    assert len(feed["items"]) == 1
    assert feed["items"][0]["app"] == "com.maps.nav"


def test_decisions_feed_paging(admin):
    base, engine = admin
    engine.process_batch("dev1", [_event(s, app="com.maps.nav", resource=Resource.GPS) for s in range(1, 6)])
    page = requests.get(f"{base}/decisions?since=2", timeout=5).json()
    assert [d["seq"] for d in page["items"]] == [3, 4, 5]


def test_quarantine_lift_endpoint(admin):
    base, engine = admin
    spy = "com.bgsync.cloud"
    for i, res in enumerate([Resource.CONTACTS, Resource.PHOTOS, Resource.SMS], start=1):
        engine.process_batch("dev1", [AccessEvent(
            event_seq=i, device_id="dev1", app_id=spy, resource=res, action=Action.READ,
            app_state=AppState.BACKGROUND, at_ms=i * 1000, payload_bytes=1)])
    assert ("dev1", spy) in engine.quarantine
    listed = requests.get(f"{base}/quarantine", timeout=5).json()
    assert listed["quarantined"] == [{"device": "dev1", "app": spy}]
    resp = requests.post(f"{base}/quarantine/dev1/{spy}/lift", timeout=5)
    assert resp.status_code == 200
    assert resp.json() == {"lifted": True}
    assert ("dev1", spy) not in engine.quarantine
    resp = requests.post(f"{base}/quarantine/dev1/{spy}/lift", timeout=5)
    assert resp.json() == {"lifted": False}


def test_unknown_route_404_and_bad_cursor_400(admin):
    base, _ = admin
    assert requests.get(f"{base}/nope", timeout=5).status_code == 404
    assert requests.get(f"{base}/threats?since=-3", timeout=5).status_code == 400
    assert requests.get(f"{base}/threats?since=abc", timeout=5).status_code == 400


def test_metrics_trials_round_trip(admin):
    base, engine = admin
    assert requests.get(f"{base}/metrics/trials", timeout=5).json() == {"trials": []}
    engine.record_trial_report({"trial_id": "trial_1", "detected": 10})
    trials = requests.get(f"{base}/metrics/trials", timeout=5).json()["trials"]
    assert trials == [{"trial_id": "trial_1", "detected": 10}]


def test_ui_placeholder_served(admin):
    base, _ = admin
    resp = requests.get(f"{base}/ui", timeout=5)
    assert resp.status_code == 200
    assert "console" in resp.text


def test_ui_serves_built_assets(tmp_path):
    engine = SecurityEngine.fresh()
    ui = tmp_path / "dist"
    ui.mkdir()
    (ui / "index.html").write_text("<html>real console</html>")
    (ui / "app.js").write_text("export {};")
    server = AdminServer(("127.0.0.1", 0), engine, None, ui_dir=ui)
    server.start()
    base = f"http://127.0.0.1:{server.server_address[1]}"
    try:
        assert "real console" in requests.get(f"{base}/ui", timeout=5).text
        js = requests.get(f"{base}/ui/app.js", timeout=5)
        assert js.status_code == 200
        assert "javascript" in js.headers["Content-Type"]
        assert requests.get(f"{base}/ui/../secrets", timeout=5).status_code == 404
    finally:
        server.stop()
        engine.close()
