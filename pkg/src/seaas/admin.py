"""HTTP admin surface: cursor-paged feeds for threats/decisions/events, the
active policy document, permission toggles, quarantine lifts, and the static
console bundle under /ui."""

from __future__ import annotations

import json
import logging
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .engine import PermissionRejected, SecurityEngine
from .policy import ParseError, PolicyError
from .resources import UnknownResource
from .server import ProtocolService

logger = logging.getLogger(__name__)

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".mjs": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".png": "image/png",
    ".svg": "image/svg+xml",
    ".map": "application/json",
}

_PLACEHOLDER_UI = b"""<!doctype html>
<html><head><title>seaas console</title></head>
<body><h1>seaas</h1>
<p>The web console has not been built. Build the frontend and point the server
at its dist directory (or place it at frontend/dist).</p></body></html>
"""

_LIFT_RE = re.compile(r"^/quarantine/([^/]+)/([^/]+)/lift$")
_DEVICE_EVENTS_RE = re.compile(r"^/devices/([^/]+)/events$")


class _AdminHandler(BaseHTTPRequestHandler):
    server: "AdminServer"
    protocol_version = "HTTP/1.1"

    # ------------------------------------------------------------------

    def do_GET(self) -> None:  # noqa: N802 (http.server naming)
        parsed = urlparse(self.path)
        route = parsed.path.rstrip("/") or "/"
        engine = self.server.engine
        try:
            if route == "/devices":
                connected = self.server.service.live_sessions() if self.server.service else {}
                devices = engine.device_summaries()
                for d in devices:
                    d["connected"] = d["device_id"] in connected
                self._json(200, {"devices": devices})
            elif _DEVICE_EVENTS_RE.match(route):
                device_id = _DEVICE_EVENTS_RE.match(route).group(1)
                cursor = self._cursor(parsed)
                items, next_cursor = engine.events_since(device_id, cursor)
                self._json(200, {"items": items, "cursor": next_cursor})
            elif route == "/threats":
                cursor = self._cursor(parsed)
                items, next_cursor = engine.threats_since(cursor)
                self._json(200, {"items": items, "cursor": next_cursor})
            elif route == "/decisions":
                cursor = self._cursor(parsed)
                items, next_cursor = engine.decisions_since(cursor)
                self._json(200, {"items": items, "cursor": next_cursor})
            elif route == "/policies":
                self._json(
                    200,
                    {
                        "version": engine.policy_version,
                        "document": engine.active_policy_document(),
                    },
                )
            elif route == "/metrics/trials":
                self._json(200, {"trials": list(engine.trial_reports)})
            elif route == "/quarantine":
                pairs = engine.quarantined_pairs()
                self._json(200, {"quarantined": [{"device": d, "app": a} for d, a in pairs]})
            elif route == "/ui" or route.startswith("/ui/"):
                self._serve_ui(route)
            else:
                self._json(404, {"error": {"message": f"no route {route}"}})
        except _BadRequest as exc:
            self._json(400, {"error": {"message": str(exc)}})

    def do_PUT(self) -> None:  # noqa: N802
        parsed = urlparse(self.path)
        route = parsed.path.rstrip("/")
        if route != "/policies":
            self._json(404, {"error": {"message": f"no route {route}"}})
            return
        body = self._read_body()
        try:
            version = self.server.engine.apply_policy_document(body.decode("utf-8"))
        except UnicodeDecodeError:
            self._json(400, {"error": {"message": "body must be UTF-8 text"}})
            return
        except PolicyError as exc:
            self._json(422, {"error": _policy_error_detail(exc)})
            return
        self._json(200, {"version": version})

    def do_POST(self) -> None:  # noqa: N802
        parsed = urlparse(self.path)
        route = parsed.path.rstrip("/")
        engine = self.server.engine
        if route == "/permissions":
            try:
                obj = json.loads(self._read_body().decode("utf-8"))
                if not isinstance(obj, dict):
                    raise _BadRequest("body must be a JSON object")
                version = engine.set_permission(
                    device_id=obj.get("device_id", ""),
                    app_id=obj.get("app_id", ""),
                    resource_name=obj.get("resource", ""),
                    verdict=obj.get("verdict", ""),
                    constraints=obj.get("constraints"),
                )
            except (ValueError, _BadRequest) as exc:
                self._json(400, {"error": {"message": f"malformed body: {exc}"}})
                return
            except (UnknownResource, PermissionRejected, PolicyError) as exc:
                self._json(400, {"error": {"message": str(exc)}})
                return
            self._json(200, {"version": version})
            return
        match = _LIFT_RE.match(route)
        if match:
            device_id, app_id = match.group(1), match.group(2)
            lifted = engine.lift_quarantine(device_id, app_id)
            self._json(200, {"lifted": lifted})
            return
        self._json(404, {"error": {"message": f"no route {route}"}})

    # ------------------------------------------------------------------

    def _cursor(self, parsed) -> int:
        query = parse_qs(parsed.query)
        raw = query.get("since", ["0"])[0]
        try:
            cursor = int(raw)
        except ValueError:
            raise _BadRequest(f"since must be an integer, got {raw!r}") from None
        if cursor < 0:
            raise _BadRequest("since must be non-negative")
        return cursor

    def _read_body(self) -> bytes:
        length = int(self.headers.get("Content-Length", "0") or "0")
        return self.rfile.read(length) if length else b""

    def _json(self, status: int, obj: dict) -> None:
        data = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _serve_ui(self, route: str) -> None:
        ui_dir = self.server.ui_dir
        rel = route[len("/ui") :].lstrip("/") or "index.html"
        if ui_dir is not None:
            target = (ui_dir / rel).resolve()
            if str(target).startswith(str(ui_dir.resolve())) and target.is_file():
                data = target.read_bytes()
                ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
                self.send_response(200)
                self.send_header("Content-Type", ctype)
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)
                return
        if rel == "index.html":
            self.send_response(200)
            self.send_header("Content-Type", "text/html; charset=utf-8")
            self.send_header("Content-Length", str(len(_PLACEHOLDER_UI)))
            self.end_headers()
            self.wfile.write(_PLACEHOLDER_UI)
        else:
            self._json(404, {"error": {"message": f"no console asset {rel}"}})

    def log_message(self, fmt: str, *args) -> None:
        logger.debug("admin: " + fmt, *args)


class _BadRequest(Exception):
    pass


def _policy_error_detail(exc: PolicyError) -> dict:
    detail = {"message": str(exc), "kind": type(exc).__name__}
    if isinstance(exc, ParseError):
        detail["line"] = exc.line
        detail["col"] = exc.col
    return detail


class AdminServer(ThreadingHTTPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(
        self,
        address: tuple[str, int],
        engine: SecurityEngine,
        service: ProtocolService | None = None,
        ui_dir: Path | None = None,
    ):
        super().__init__(address, _AdminHandler)
        self.engine = engine
        self.service = service
        self.ui_dir = Path(ui_dir) if ui_dir is not None else None

    def start(self) -> None:
        threading.Thread(target=self.serve_forever, daemon=True).start()

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
