"""Wire contract between device agents and the cloud service: length-prefixed
UTF-8 JSON frames over one ordered byte stream.

Frame layout: 4-byte big-endian body length, then `length` bytes of JSON
encoding exactly one message. Bodies are capped at 1 MiB.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

from .policy import Decision, PolicyError
from .resources import AccessEvent, DeviceDescriptor, MalformedEvent, UnknownResource

MAX_BODY_BYTES = 1_048_576
_HEADER = struct.Struct(">I")

DEFAULT_PORT = 7740
DEFAULT_ADMIN_PORT = 7741
HEARTBEAT_INTERVAL_S = 5.0
HEARTBEAT_TIMEOUT_S = 15.0


class FrameTooLarge(Exception):
    pass


class FramingError(Exception):
    """Unrecoverable stream corruption; the connection must be closed."""


class MalformedMessage(Exception):
    """Body is not a valid message; reply with err and close."""

    def __init__(self, detail: str, msg_type: str | None = None):
        super().__init__(detail)
        self.msg_type = msg_type


# Message field names, in canonical body order.
_FIELD_ORDER = ("t", "sid", "device", "events", "decisions", "policy", "version", "code", "detail")

# Per-type required/optional payload fields beyond "t".
_SCHEMAS: dict[str, tuple[frozenset[str], frozenset[str]]] = {
    "hello": (frozenset({"device"}), frozenset()),
    "hello_ack": (frozenset({"sid", "version", "policy"}), frozenset()),
    "events": (frozenset({"sid", "events"}), frozenset()),
    "decisions": (frozenset({"sid", "decisions"}), frozenset()),
    "policy_update": (frozenset({"sid", "version", "policy"}), frozenset()),
    "policy_ack": (frozenset({"sid", "version"}), frozenset()),
    "hb": (frozenset({"sid"}), frozenset()),
    "hb_ack": (frozenset({"sid"}), frozenset()),
    "bye": (frozenset({"sid"}), frozenset()),
    "err": (frozenset({"code", "detail"}), frozenset({"sid"})),
}


@dataclass(frozen=True)
class Message:
    t: str
    sid: str | None = None
    device: DeviceDescriptor | None = None
    events: tuple[AccessEvent, ...] | None = None
    decisions: tuple[Decision, ...] | None = None
    policy: str | None = None
    version: int | None = None
    code: str | None = None
    detail: str | None = None


def hello(device: DeviceDescriptor) -> Message:
    return Message(t="hello", device=device)


def hello_ack(sid: str, version: int, policy: str) -> Message:
    return Message(t="hello_ack", sid=sid, version=version, policy=policy)


def events_msg(sid: str, events: tuple[AccessEvent, ...]) -> Message:
    return Message(t="events", sid=sid, events=events)


def decisions_msg(sid: str, decisions: tuple[Decision, ...]) -> Message:
    return Message(t="decisions", sid=sid, decisions=decisions)


def policy_update(sid: str, version: int, policy: str) -> Message:
    return Message(t="policy_update", sid=sid, version=version, policy=policy)


def policy_ack(sid: str, version: int) -> Message:
    return Message(t="policy_ack", sid=sid, version=version)


def heartbeat(sid: str) -> Message:
    return Message(t="hb", sid=sid)


def err(code: str, detail: str, sid: str | None = None) -> Message:
    return Message(t="err", sid=sid, code=code, detail=detail)


def message_to_wire(msg: Message) -> dict:
    body: dict = {"t": msg.t}
    if msg.sid is not None:
        body["sid"] = msg.sid
    if msg.device is not None:
        body["device"] = msg.device.to_wire()
    if msg.events is not None:
        body["events"] = [e.to_wire() for e in msg.events]
    if msg.decisions is not None:
        body["decisions"] = [d.to_wire() for d in msg.decisions]
    if msg.policy is not None:
        body["policy"] = msg.policy
    if msg.version is not None:
        body["version"] = msg.version
    if msg.code is not None:
        body["code"] = msg.code
    if msg.detail is not None:
        body["detail"] = msg.detail
    return body


def message_from_wire(obj: object) -> Message:
    if not isinstance(obj, dict):
        raise MalformedMessage("body must be a JSON object")
    t = obj.get("t")
    if t not in _SCHEMAS:
        raise MalformedMessage(f"unknown message type: {t!r}")
    required, optional = _SCHEMAS[t]
    present = set(obj) - {"t"}
    missing = required - present
    if missing:
        raise MalformedMessage(f"{t}: missing fields {sorted(missing)}", msg_type=t)
    extra = present - required - optional
    if extra:
        raise MalformedMessage(f"{t}: unexpected fields {sorted(extra)}", msg_type=t)

    try:
        sid = _opt_str(obj, "sid")
        device = DeviceDescriptor.from_wire(obj["device"]) if "device" in obj else None
        events = None
        if "events" in obj:
            if not isinstance(obj["events"], list):
                raise MalformedMessage(f"{t}: events must be a list")
            events = tuple(AccessEvent.from_wire(e) for e in obj["events"])
        decisions = None
        if "decisions" in obj:
            if not isinstance(obj["decisions"], list):
                raise MalformedMessage(f"{t}: decisions must be a list")
            decisions = tuple(Decision.from_wire(d) for d in obj["decisions"])
        policy = _opt_str(obj, "policy")
        version = obj.get("version")
        if version is not None and (not isinstance(version, int) or isinstance(version, bool)):
            raise MalformedMessage(f"{t}: version must be an integer")
        code = _opt_str(obj, "code")
        detail = _opt_str(obj, "detail")
    except (MalformedEvent, UnknownResource, PolicyError, KeyError, ValueError, TypeError) as exc:
        raise MalformedMessage(f"{t}: bad payload: {exc}", msg_type=t) from None

    return Message(
        t=t,
        sid=sid,
        device=device,
        events=events,
        decisions=decisions,
        policy=policy,
        version=version,
        code=code,
        detail=detail,
    )


def _opt_str(obj: dict, key: str) -> str | None:
    value = obj.get(key)
    if value is not None and not isinstance(value, str):
        raise MalformedMessage(f"field {key!r} must be a string")
    return value


def encode_frame(msg: Message) -> bytes:
    """Canonical bytes for one message; identical messages encode identically."""
    body = json.dumps(message_to_wire(msg), separators=(",", ":")).encode("utf-8")
    if len(body) > MAX_BODY_BYTES:
        raise FrameTooLarge(f"body of {len(body)} bytes exceeds {MAX_BODY_BYTES}")
    return _HEADER.pack(len(body)) + body


def decode_frame(buf: bytes | bytearray | memoryview) -> tuple[Message, int] | None:
    """Incrementally parse one frame from the head of `buf`.

    Returns (message, bytes consumed) so concatenated frames can be walked,
    or None when more bytes are needed. Corrupt input raises FramingError
    (close the connection) or MalformedMessage (err reply, then close); no
    byte string makes this abort.
    """
    if len(buf) < _HEADER.size:
        return None
    (length,) = _HEADER.unpack_from(bytes(buf[: _HEADER.size]))
    if length == 0 or length > MAX_BODY_BYTES:
        raise FramingError(f"declared body length {length} outside 1..{MAX_BODY_BYTES}")
    total = _HEADER.size + length
    if len(buf) < total:
        return None
    body = bytes(buf[_HEADER.size : total])
    try:
        text = body.decode("utf-8")
    except UnicodeDecodeError:
        raise MalformedMessage("body is not valid UTF-8") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedMessage(f"body is not valid JSON: {exc.msg}") from None
    return message_from_wire(obj), total


class FrameReader:
    """Accumulates stream bytes and yields complete messages in order."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Message]:
        self._buf.extend(data)
        out: list[Message] = []
        while True:
            result = decode_frame(self._buf)
            if result is None:
                return out
            msg, consumed = result
            del self._buf[:consumed]
            out.append(msg)
