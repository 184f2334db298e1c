"""Append-only JSON-lines event log plus snapshot files: the service's whole
persistence story. Every state change lands here first, so replaying the log
from the last snapshot rebuilds the server exactly."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

logger = logging.getLogger(__name__)

LOG_FILENAME = "events.log"
SNAPSHOT_FILENAME = "snapshot.json"


class RecordKind(str, Enum):
    EVENT = "EVENT"
    DECISION = "DECISION"
    THREAT = "THREAT"
    POLICY_CHANGE = "POLICY_CHANGE"
    QUARANTINE = "QUARANTINE"


@dataclass(frozen=True)
class EventLogRecord:
    seq: int
    kind: RecordKind
    payload: dict
    ts_ms: int

    def to_line(self) -> str:
        return json.dumps(
            {"seq": self.seq, "kind": self.kind.value, "payload": self.payload, "ts_ms": self.ts_ms},
            separators=(",", ":"),
        )


class EventLog:
    """Writer over one gapless append-only log file."""

    def __init__(self, data_dir: Path, start_seq: int = 0):
        self.path = Path(data_dir) / LOG_FILENAME
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")
        self._seq = start_seq

    @property
    def seq(self) -> int:
        return self._seq

    def append(self, kind: RecordKind, payload: dict, ts_ms: int) -> EventLogRecord:
        self._seq += 1
        record = EventLogRecord(seq=self._seq, kind=kind, payload=payload, ts_ms=ts_ms)
        self._fh.write(record.to_line() + "\n")
        self._fh.flush()
        return record

    def close(self) -> None:
        self._fh.close()


def read_log(data_dir: Path, after_seq: int = 0) -> list[EventLogRecord]:
    """Read records with seq > after_seq; a torn final line is dropped with a
    warning so recovery resumes from the last complete record."""
    path = Path(data_dir) / LOG_FILENAME
    if not path.exists():
        return []
    records: list[EventLogRecord] = []
    raw = path.read_bytes()
    lines = raw.split(b"\n")
    for i, line in enumerate(lines):
        if not line:
            continue
        try:
            obj = json.loads(line.decode("utf-8"))
            record = EventLogRecord(
                seq=obj["seq"],
                kind=RecordKind(obj["kind"]),
                payload=obj["payload"],
                ts_ms=obj["ts_ms"],
            )
        except (ValueError, KeyError, UnicodeDecodeError):
            if i == len(lines) - 1 or all(not rest for rest in lines[i + 1 :]):
                logger.warning("dropping torn final log record in %s", path)
                break
            raise CorruptLog(f"unreadable record at line {i + 1} of {path}")
        if record.seq > after_seq:
            records.append(record)
    return records


class CorruptLog(Exception):
    """A record before the final line failed to parse; the log is unusable."""


def write_snapshot(data_dir: Path, state: dict) -> None:
    """Atomically replace the snapshot (tmp file + rename)."""
    path = Path(data_dir) / SNAPSHOT_FILENAME
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(state, separators=(",", ":")), encoding="utf-8")
    os.replace(tmp, path)


def read_snapshot(data_dir: Path) -> dict | None:
    path = Path(data_dir) / SNAPSHOT_FILENAME
    if not path.exists():
        return None
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except ValueError:
        logger.warning("snapshot at %s unreadable; recovering from the log alone", path)
        return None
