"""HTTP gateway exposing one operator agent's state ("gateway-v1").

Endpoints (JSON request/response):
    GET  /api/v1/items                     item list with latest values
    GET  /api/v1/alarms                    open alarms + recent history
    GET  /api/v1/subscriptions             subscription states
    GET  /api/v1/trend?address=&t1=&t2=    buffered trend window
    POST /api/v1/alarms/ack                {"address":..., "kind":...}
    POST /api/v1/write                     {"address":..., "value":..., "publisher"?}
Streaming:
    GET  /api/v1/stream                    Server-Sent Events; one JSON
                                           event per message: telemetry,
                                           alarm, or subscription_state.

The gateway never touches operator state directly: reads go through
snapshot requests into the agent, events arrive through a sink the agent
publishes into. Optionally serves a static console bundle at /.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional
from urllib.parse import parse_qs, urlparse

logger = logging.getLogger(__name__)

STREAM_QUEUE_CAPACITY = 1000
KEEPALIVE_INTERVAL_S = 10.0

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".svg": "image/svg+xml",
}


class _EventHub:
    """Fans operator events out to connected stream clients."""

    def __init__(self) -> None:
        self._clients: list[queue.Queue] = []
        self._lock = threading.Lock()

    def attach(self) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=STREAM_QUEUE_CAPACITY)
        with self._lock:
            self._clients.append(q)
        return q

    def detach(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._clients:
                self._clients.remove(q)

    def publish(self, event: dict) -> None:
        with self._lock:
            clients = list(self._clients)
        for q in clients:
            try:
                q.put_nowait(event)
            except queue.Full:
                pass  # slow console: drop rather than stall the operator


class Gateway:
    """HTTP server bound to one operator agent."""

    def __init__(self, operator, listen: tuple[str, int], static_dir: Optional[str] = None) -> None:
        self.operator = operator
        self.hub = _EventHub()
        self.static_dir = Path(static_dir) if static_dir else None
        operator.add_event_sink(self.hub.publish)
        handler = _make_handler(self)
        self._server = ThreadingHTTPServer(listen, handler)
        self._server.daemon_threads = True
        self.address: tuple[str, int] = self._server.server_address[:2]
        self._thread = threading.Thread(
            target=self._server.serve_forever, name=f"gateway-{self.address[1]}", daemon=True
        )

    @property
    def port(self) -> int:
        return self.address[1]

    @property
    def url(self) -> str:
        host = self.address[0] if self.address[0] not in ("0.0.0.0", "") else "127.0.0.1"
        return f"http://{host}:{self.port}"

    def start(self) -> "Gateway":
        self._thread.start()
        logger.info("gateway for %s listening on %s", self.operator.aid, self.url)
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()


def _make_handler(gateway: Gateway):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # route through logging, not stderr
            logger.debug("gateway: " + fmt, *args)

        def _json(self, code: int, body: dict) -> None:
            raw = json.dumps(body).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(raw)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(raw)

        def _read_body(self) -> dict:
            length = int(self.headers.get("Content-Length", "0"))
            if length <= 0:
                return {}
            try:
                return json.loads(self.rfile.read(length).decode("utf-8"))
            except (ValueError, UnicodeDecodeError):
                return {}

        def do_OPTIONS(self):
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_GET(self):
            url = urlparse(self.path)
            if url.path == "/api/v1/stream":
                self._stream()
            elif url.path == "/api/v1/items":
                snapshot = gateway.operator.console_request({"action": "snapshot"})
                self._json(200, {"items": snapshot.get("items", []),
                                 "update_rate_ms": snapshot.get("update_rate_ms", 0)})
            elif url.path == "/api/v1/alarms":
                snapshot = gateway.operator.console_request({"action": "snapshot"})
                self._json(200, {"alarms": snapshot.get("alarms", {"open": [], "history": []})})
            elif url.path == "/api/v1/subscriptions":
                snapshot = gateway.operator.console_request({"action": "snapshot"})
                self._json(200, {"subscriptions": snapshot.get("subscriptions", [])})
            elif url.path == "/api/v1/trend":
                params = parse_qs(url.query)
                result = gateway.operator.console_request({
                    "action": "trend",
                    "address": params.get("address", [""])[0],
                    "t1": int(params.get("t1", ["0"])[0]),
                    "t2": int(params.get("t2", [str(2**62)])[0]),
                })
                self._json(200 if result.get("status") == "ok" else 400, result)
            elif gateway.static_dir is not None:
                self._static(url.path)
            else:
                self._json(404, {"status": "error", "error": "not-found"})

        def do_POST(self):
            url = urlparse(self.path)
            body = self._read_body()
            if url.path == "/api/v1/alarms/ack":
                result = gateway.operator.console_request({"action": "ack-alarm", **body})
                self._json(200 if result.get("status") == "ok" else 404, result)
            elif url.path == "/api/v1/write":
                result = gateway.operator.console_request({"action": "write", **body})
                code = {"ok": 200, "refused": 403, "failure": 422}.get(result.get("status"), 504)
                self._json(code, result)
            else:
                self._json(404, {"status": "error", "error": "not-found"})

        def _stream(self) -> None:
            q = gateway.hub.attach()
            try:
                self.send_response(200)
                self.send_header("Content-Type", "text/event-stream")
                self.send_header("Cache-Control", "no-cache")
                self.send_header("Access-Control-Allow-Origin", "*")
                self.end_headers()
                hello = {"type": "hello", "operator": gateway.operator.aid.canonical}
                self.wfile.write(f"data: {json.dumps(hello)}\n\n".encode("utf-8"))
                self.wfile.flush()
                while True:
                    try:
                        event = q.get(timeout=KEEPALIVE_INTERVAL_S)
                        self.wfile.write(f"data: {json.dumps(event)}\n\n".encode("utf-8"))
                    except queue.Empty:
                        self.wfile.write(b": keepalive\n\n")
                    self.wfile.flush()
            except (BrokenPipeError, ConnectionResetError, OSError):
                pass
            finally:
                gateway.hub.detach(q)

        def _static(self, path: str) -> None:
            name = "index.html" if path in ("/", "") else path.lstrip("/")
            target = (gateway.static_dir / name).resolve()
            if not str(target).startswith(str(gateway.static_dir.resolve())) or not target.is_file():
                self._json(404, {"status": "error", "error": "not-found"})
                return
            raw = target.read_bytes()
            self.send_response(200)
            self.send_header(
                "Content-Type", _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
            )
            self.send_header("Content-Length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)

    return Handler


def gateway_serve(operator, listen: tuple[str, int], static_dir: Optional[str] = None) -> Gateway:
    """Start a gateway for a running operator agent; AddressInUse propagates as OSError."""
    return Gateway(operator, listen, static_dir=static_dir).start()
