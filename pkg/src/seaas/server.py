"""Session handling and the TCP front door: one connection per device, frames
processed strictly in order, policy updates pushed to every live session."""

from __future__ import annotations

import logging
import secrets
import socket
import socketserver
import threading
from dataclasses import dataclass, field
from typing import Callable

from . import protocol
from .engine import BatchError, SecurityEngine
from .protocol import (
    HEARTBEAT_INTERVAL_S,
    HEARTBEAT_TIMEOUT_S,
    FrameReader,
    FramingError,
    MalformedMessage,
    Message,
    encode_frame,
)
from .resources import MalformedEvent, UnknownResource

logger = logging.getLogger(__name__)


@dataclass
class Session:
    sid: str
    device_id: str
    last_seq: int
    policy_version_acked: int
    deadline_ms: int
    sender: Callable[[Message], None] | None = field(default=None, repr=False)


class ProtocolService:
    """Message-level protocol logic, independent of the transport."""

    def __init__(
        self,
        engine: SecurityEngine,
        hb_interval_s: float = HEARTBEAT_INTERVAL_S,
        hb_timeout_s: float = HEARTBEAT_TIMEOUT_S,
    ):
        self.engine = engine
        self.hb_timeout_ms = int(hb_timeout_s * 1000)
        self.hb_interval_s = hb_interval_s
        self._lock = threading.RLock()
        self._by_sid: dict[str, Session] = {}
        self._by_device: dict[str, Session] = {}
        engine.on_policy_change = self.push_policy

    # ------------------------------------------------------------------

    def handle_message(self, msg: Message, sender: Callable[[Message], None] | None = None) -> Message:
        """Process one inbound message and produce the reply. Raises nothing
        for session-level faults; those come back as err messages."""
        if msg.t == "hello":
            return self.handshake(msg, sender=sender)[1]
        if msg.t == "events":
            return self.process_event_batch(msg)
        if msg.t == "hb":
            session = self._touch(msg.sid)
            if session is None:
                return protocol.err("no_session", f"unknown session {msg.sid!r}", sid=msg.sid)
            return Message(t="hb_ack", sid=session.sid)
        if msg.t == "policy_ack":
            session = self._touch(msg.sid)
            if session is None:
                return protocol.err("no_session", f"unknown session {msg.sid!r}", sid=msg.sid)
            with self._lock:
                session.policy_version_acked = msg.version or 0
            return Message(t="hb_ack", sid=session.sid)
        if msg.t == "bye":
            self.close_session(msg.sid)
            return Message(t="hb_ack", sid=msg.sid)
        return protocol.err("bad_message", f"unexpected message type {msg.t!r}", sid=msg.sid)

    def handshake(
        self, hello: Message, sender: Callable[[Message], None] | None = None
    ) -> tuple[Session, Message]:
        """Open (or replace) the device's session. The previous session's
        event cursor is inherited so replays after reconnect stay idempotent."""
        if hello.t != "hello" or hello.device is None:
            raise _HandshakeRejected(protocol.err("bad_hello", "hello requires a device descriptor"))
        device = hello.device
        try:
            self.engine.register_device(device)
        except (MalformedEvent, UnknownResource) as exc:
            raise _HandshakeRejected(protocol.err("bad_hello", str(exc))) from None
        now = self.engine.clock()
        with self._lock:
            prior = self._by_device.get(device.device_id)
            if prior is not None:
                self._by_sid.pop(prior.sid, None)
            session = Session(
                sid=secrets.token_hex(8),
                device_id=device.device_id,
                last_seq=self.engine.last_seq_for(device.device_id),
                policy_version_acked=self.engine.policy_version,
                deadline_ms=now + self.hb_timeout_ms,
                sender=sender,
            )
            self._by_sid[session.sid] = session
            self._by_device[device.device_id] = session
        ack = protocol.hello_ack(
            sid=session.sid,
            version=self.engine.policy_version,
            policy=self.engine.active_policy_document(),
        )
        return session, ack

    def process_event_batch(self, msg: Message) -> Message:
        session = self._touch(msg.sid)
        if session is None:
            return protocol.err("no_session", f"unknown session {msg.sid!r}", sid=msg.sid)
        events = msg.events or ()
        try:
            decided = self.engine.process_batch(session.device_id, events)
        except BatchError as exc:
            return protocol.err(exc.code, exc.detail, sid=session.sid)
        with self._lock:
            session.last_seq = self.engine.last_seq_for(session.device_id)
        return protocol.decisions_msg(sid=session.sid, decisions=tuple(decided))

    def close_session(self, sid: str | None) -> None:
        with self._lock:
            session = self._by_sid.pop(sid, None) if sid else None
            if session is not None and self._by_device.get(session.device_id) is session:
                del self._by_device[session.device_id]

    def _touch(self, sid: str | None) -> Session | None:
        now = self.engine.clock()
        with self._lock:
            session = self._by_sid.get(sid) if sid else None
            if session is None:
                return None
            if now > session.deadline_ms:
                self.close_session(sid)
                return None
            session.deadline_ms = now + self.hb_timeout_ms
            return session

    def sweep_expired(self) -> list[str]:
        """Close sessions whose heartbeat deadline has passed."""
        now = self.engine.clock()
        with self._lock:
            expired = [s.sid for s in self._by_sid.values() if now > s.deadline_ms]
        for sid in expired:
            logger.info("closing session %s: missed heartbeats", sid)
            self.close_session(sid)
        return expired

    def push_policy(self, version: int, document: str) -> None:
        """Send the new policy document to every connected session."""
        with self._lock:
            sessions = list(self._by_sid.values())
        for session in sessions:
            if session.sender is None:
                continue
            try:
                session.sender(
                    protocol.policy_update(sid=session.sid, version=version, policy=document)
                )
            except OSError:
                logger.warning("policy push to %s failed; closing session", session.sid)
                self.close_session(session.sid)

    def live_sessions(self) -> dict[str, str]:
        with self._lock:
            return {s.device_id: s.sid for s in self._by_sid.values()}


class _HandshakeRejected(Exception):
    def __init__(self, reply: Message):
        super().__init__(reply.detail)
        self.reply = reply


class _OffloadHandler(socketserver.BaseRequestHandler):
    server: "OffloadServer"

    def handle(self) -> None:
        reader = FrameReader()
        write_lock = threading.Lock()
        sock: socket.socket = self.request
        my_sids: set[str] = set()

        def send(msg: Message) -> None:
            data = encode_frame(msg)
            with write_lock:
                sock.sendall(data)

        try:
            while not self.server.stopping.is_set():
                try:
                    data = sock.recv(65536)
                except (ConnectionResetError, OSError):
                    break
                if not data:
                    break
                try:
                    messages = reader.feed(data)
                except FramingError as exc:
                    logger.warning("framing error, closing connection: %s", exc)
                    break
                except MalformedMessage as exc:
                    code = "bad_hello" if exc.msg_type == "hello" else "malformed"
                    try:
                        send(protocol.err(code, str(exc)))
                    except OSError:
                        pass
                    break
                for msg in messages:
                    try:
                        reply = self.server.service.handle_message(msg, sender=send)
                    except _HandshakeRejected as exc:
                        reply = exc.reply
                    except MalformedMessage as exc:
                        reply = protocol.err("malformed", str(exc))
                    if msg.t == "hello" and reply.t == "hello_ack":
                        my_sids.add(reply.sid)
                    send(reply)
                    if msg.t == "bye":
                        return
        finally:
            for sid in my_sids:
                self.server.service.close_session(sid)


class OffloadServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], service: ProtocolService):
        super().__init__(address, _OffloadHandler)
        self.service = service
        self.stopping = threading.Event()
        self._reaper = threading.Thread(target=self._reap_loop, daemon=True)

    def start(self) -> None:
        threading.Thread(target=self.serve_forever, daemon=True).start()
        self._reaper.start()

    def stop(self) -> None:
        self.stopping.set()
        self.shutdown()
        self.server_close()

    def _reap_loop(self) -> None:
        while not self.stopping.wait(1.0):
            self.service.sweep_expired()
