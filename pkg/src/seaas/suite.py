"""Builds the shipped scenario suite: labeled per-user scripts that mix benign
app traffic with microphone spying, identifier harvesting, background data
exfiltration, sensor-polling bursts, and one deliberately sub-threshold leak
the default pack cannot see (so the miss column is never trivially zero).

Everything is generated from the seed; the same seed always yields the same
files, labels, and therefore the same trial metrics.
"""

from __future__ import annotations

import random
from pathlib import Path
from typing import Sequence

from .agent import ScriptedEvent, load_script, write_script
from .resources import Action, AppState, Resource

T0_MS = 32_400_000  # scripts start at 09:00 device time, clear of quiet hours
DEFAULT_SEED = 42
DEFAULT_TRIALS = 5
DEFAULT_USERS = 10

# (app, resource, action, state, count, start_s, spacing_s)
_BENIGN_STREAMS = [
    ("com.maps.nav", Resource.GPS, Action.READ, AppState.FOREGROUND, 6, 0, 6),
    ("com.maps.nav", Resource.WIFI_RADIO, Action.READ, AppState.FOREGROUND, 2, 3, 20),
    ("com.chat.hello", Resource.CONTACTS, Action.READ, AppState.FOREGROUND, 3, 5, 15),
    ("com.chat.hello", Resource.SMS, Action.WRITE, AppState.FOREGROUND, 2, 8, 25),
    ("com.camera.pro", Resource.CAMERA, Action.RECORD, AppState.FOREGROUND, 3, 12, 18),
    ("com.camera.pro", Resource.PHOTOS, Action.WRITE, AppState.FOREGROUND, 2, 14, 22),
    ("com.voice.memo", Resource.MICROPHONE, Action.RECORD, AppState.FOREGROUND, 2, 20, 30),
    ("com.cal.plan", Resource.CALENDAR, Action.READ, AppState.FOREGROUND, 2, 10, 26),
    ("com.cal.plan", Resource.CALENDAR, Action.WRITE, AppState.FOREGROUND, 1, 40, 0),
    ("com.cal.plan", Resource.CALENDAR, Action.READ, AppState.BACKGROUND, 1, 70, 0),
    ("com.photo.edit", Resource.PHOTOS, Action.READ, AppState.FOREGROUND, 2, 16, 24),
    ("com.photo.edit", Resource.PHOTOS, Action.WRITE, AppState.FOREGROUND, 1, 55, 0),
    ("com.weather.now", Resource.GPS, Action.READ, AppState.FOREGROUND, 3, 7, 21),
    ("com.social.wave", Resource.CONTACTS, Action.READ, AppState.FOREGROUND, 2, 18, 28),
    ("com.social.wave", Resource.CAMERA, Action.RECORD, AppState.FOREGROUND, 2, 30, 35),
]

# Distinct access shapes so each denied attempt reaches the server once
# instead of being pre-blocked by the agent after the first verdict.
_VIOLATIONS = [
    (130, "com.game.puzzle", Resource.MICROPHONE, Action.RECORD, AppState.FOREGROUND),
    (134, "com.game.puzzle", Resource.MICROPHONE, Action.RECORD, AppState.BACKGROUND),
    (138, "com.game.puzzle", Resource.MICROPHONE, Action.READ, AppState.FOREGROUND),
    (142, "com.game.puzzle", Resource.GPS, Action.TRANSMIT, AppState.FOREGROUND),
    (146, "com.adtrack.lib", Resource.DEVICE_IDENTITY, Action.READ, AppState.FOREGROUND),
    (150, "com.adtrack.lib", Resource.CALL_LOG, Action.READ, AppState.BACKGROUND),
]

_EXFILTRATIONS = [
    (180, Resource.CONTACTS),
    (184, Resource.PHOTOS),
    (188, Resource.SMS),
]

_ANOMALY_APP = "com.fit.tracker"
_ANOMALY_START_S = 200
_ANOMALY_BASE_LEN = 42  # events over the 30-per-minute threshold get labeled
_ANOMALY_THRESHOLD = 30

_FP_USER_INDEX = 3  # one user per trial runs a benign burst that trips the detector
_FP_APP = "com.puzzle.bird"
_FP_START_S = 270
_FP_LEN = 35

_MISS_AT_S = 260  # background calendar leak: real exfiltration, invisible to the pack


def _payload(rng: random.Random, action: Action) -> int:
    if action == Action.RECORD:
        return rng.randint(1024, 65536)
    if action == Action.TRANSMIT:
        return rng.randint(256, 8192)
    return rng.randint(64, 4096)


def build_user_script(seed: int, trial_index: int, user_index: int) -> list[ScriptedEvent]:
    rng = random.Random(f"{seed}:{trial_index}:{user_index}")
    events: list[ScriptedEvent] = []

    def add(at_s: float, app: str, resource: Resource, action: Action, state: AppState, label: str):
        events.append(
            ScriptedEvent(
                at_ms=T0_MS + int(at_s * 1000),
                app=app,
                resource=resource,
                action=action,
                app_state=state,
                payload_bytes=_payload(rng, action),
                label=label,
            )
        )

    for app, resource, action, state, count, start_s, spacing_s in _BENIGN_STREAMS:
        for i in range(count):
            jitter = rng.uniform(-0.4, 0.4)
            add(start_s + i * spacing_s + jitter, app, resource, action, state, "benign")

    for at_s, app, resource, action, state in _VIOLATIONS:
        add(at_s + rng.uniform(-0.3, 0.3), app, resource, action, state, "threat:POLICY_VIOLATION")

    for at_s, resource in _EXFILTRATIONS:
        add(
            at_s + rng.uniform(-0.3, 0.3),
            "com.bgsync.cloud",
            resource,
            Action.READ,
            AppState.BACKGROUND,
            "threat:BACKGROUND_EXFILTRATION",
        )

    burst_len = _ANOMALY_BASE_LEN + trial_index
    for i in range(burst_len):
        label = "benign" if i < _ANOMALY_THRESHOLD else "threat:ANOMALOUS_FREQUENCY"
        add(_ANOMALY_START_S + i, _ANOMALY_APP, Resource.GPS, Action.READ, AppState.FOREGROUND, label)

    add(
        _MISS_AT_S + rng.uniform(-0.3, 0.3),
        "com.sneak.beacon",
        Resource.CALENDAR,
        Action.READ,
        AppState.BACKGROUND,
        "threat:BACKGROUND_EXFILTRATION",
    )

    if user_index == _FP_USER_INDEX:
        for i in range(_FP_LEN):
            add(_FP_START_S + i, _FP_APP, Resource.ACCELEROMETER, Action.READ, AppState.FOREGROUND, "benign")

    events.sort(key=lambda e: e.at_ms)
    return events


def build_default_suite(
    seed: int = DEFAULT_SEED, trials: int = DEFAULT_TRIALS, users: int = DEFAULT_USERS
) -> list[tuple[str, list[tuple[str, list[ScriptedEvent]]]]]:
    """[(trial_id, [(device_id, script), ...]), ...] for the shipped suite."""
    suite = []
    for t in range(trials):
        trial_id = f"trial_{t + 1}"
        scripts = [
            (f"user_{m}", build_user_script(seed, t, m)) for m in range(users)
        ]
        suite.append((trial_id, scripts))
    return suite


def write_suite(base_dir: Path, suite) -> None:
    base = Path(base_dir)
    for trial_id, scripts in suite:
        trial_dir = base / trial_id
        trial_dir.mkdir(parents=True, exist_ok=True)
        for device_id, script in scripts:
            write_script(trial_dir / f"{device_id}.jsonl", script)


def load_suite(base_dir: Path) -> list[tuple[str, list[tuple[str, list[ScriptedEvent]]]]]:
    """Read a suite directory laid out as trial_<n>/user_<m>.jsonl."""
    base = Path(base_dir)
    trial_dirs = sorted(
        (d for d in base.iterdir() if d.is_dir() and d.name.startswith("trial_")),
        key=lambda d: _trailing_int(d.name),
    )
    if not trial_dirs:
        raise FileNotFoundError(f"no trial_<n> directories under {base}")
    suite = []
    for trial_dir in trial_dirs:
        scripts = []
        for script_path in sorted(trial_dir.glob("*.jsonl"), key=lambda p: p.stem):
            scripts.append((script_path.stem, load_script(script_path)))
        if not scripts:
            raise FileNotFoundError(f"no .jsonl scripts under {trial_dir}")
        suite.append((trial_dir.name, scripts))
    return suite


def _trailing_int(name: str) -> int:
    try:
        return int(name.rsplit("_", 1)[1])
    except (IndexError, ValueError):
        return 0


def labels_for(device_id: str, script: Sequence[ScriptedEvent]) -> dict[tuple[str, int], str]:
    """Ground truth for the label join: scripted line order is the event_seq."""
    return {(device_id, seq): e.label for seq, e in enumerate(script, start=1)}
