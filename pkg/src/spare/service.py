"""A small HTTP front for the firewall.

Routes::

    GET  /resource?id=<token>&resubmit=<bool>   200 accept / 403 reject
    GET  /admin/devices                         per-device counters
    POST /admin/devices/<id>/reset              204

The admin routes are unauthenticated; keep the default loopback binding.
The ledger is snapshotted to ``snapshot_path`` every ``snapshot_interval``
seconds and on shutdown, and restored from it on start.
"""
from __future__ import annotations

import json
import logging
import os
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import unquote, urlsplit

from spare.codec import extract_token
from spare.config import ServiceConfig
from spare.firewall import DeviceLedger, Firewall

log = logging.getLogger(__name__)


class GatewayService:
    def __init__(self, cfg: ServiceConfig, clock=time.time):
        self.cfg = cfg
        self.clock = clock
        ledger = None
        if cfg.snapshot_path and Path(cfg.snapshot_path).exists():
            ledger = DeviceLedger.restore(Path(cfg.snapshot_path).read_bytes())
            log.info("restored %d devices from %s", len(ledger.devices), cfg.snapshot_path)
        self.firewall = Firewall(cfg.firewall, ledger)
        self._stop = threading.Event()
        self._httpd: ThreadingHTTPServer | None = None
        self._threads: list[threading.Thread] = []

    def now(self) -> int:
        return int(self.clock())

    def handle(self, method: str, target: str) -> tuple[int, dict | None]:
        """Route one request; returns ``(status, json_body)``."""
        parts = urlsplit(target)
        path = parts.path.rstrip("/") or "/"
        segments = path.split("/")[1:]

        if path == "/resource":
            if method != "GET":
                return 405, {"error": "method not allowed"}
            token, resubmit = extract_token("?" + parts.query)
            verdict = self.firewall.validate(token, resubmit, self.now())
            if verdict.accepted:
                return 200, {"verdict": "accept"}
            return 403, {"verdict": "reject", "reason": verdict.reason.value}

        if path == "/admin/devices":
            if method != "GET":
                return 405, {"error": "method not allowed"}
            return 200, self.firewall.stats()

        if len(segments) == 4 and segments[:2] == ["admin", "devices"] and segments[3] == "reset":
            if method != "POST":
                return 405, {"error": "method not allowed"}
            self.firewall.reset_device(unquote(segments[2]))
            return 204, None

        return 404, {"error": "not found"}

    def save_snapshot(self) -> None:
        if not self.cfg.snapshot_path:
            return
        target = Path(self.cfg.snapshot_path)
        tmp = target.with_name(target.name + ".tmp")
        tmp.write_bytes(self.firewall.snapshot())
        os.replace(tmp, target)

    def _housekeeping(self) -> None:
        while not self._stop.wait(self.cfg.snapshot_interval):
            try:
                self.firewall.advance_time(self.now())
                self.save_snapshot()
            except OSError:
                log.exception("periodic snapshot failed")

    @property
    def address(self) -> tuple[str, int]:
        if self._httpd is None:
            return self.cfg.host, self.cfg.port
        return self._httpd.server_address[:2]

    def start(self) -> "GatewayService":
        """Bind and serve in background threads."""
        self._httpd = ThreadingHTTPServer((self.cfg.host, self.cfg.port), _handler_for(self))
        self._httpd.daemon_threads = True
        for target in (self._httpd.serve_forever, self._housekeeping):
            t = threading.Thread(target=target, daemon=True)
            t.start()
            self._threads.append(t)
        log.info("listening on %s:%d", *self.address)
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
        for t in self._threads:
            t.join(timeout=5)
        self._threads.clear()
        self.save_snapshot()

    def serve_forever(self) -> None:
        self.start()
        try:
            while not self._stop.wait(0.5):
                pass
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def _handler_for(service: GatewayService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def _respond(self, method: str) -> None:
            try:
                status, body = service.handle(method, self.path)
            except Exception:
                log.exception("request failed: %s %s", method, self.path)
                status, body = 500, {"error": "internal error"}
            payload = b"" if body is None else json.dumps(body, sort_keys=True).encode()
            self.send_response(status)
            if body is not None:
                self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def do_GET(self):
            self._respond("GET")

        def do_POST(self):
            length = int(self.headers.get("Content-Length") or 0)
            if length:
                self.rfile.read(length)
            self._respond("POST")

        def log_message(self, fmt, *args):
            log.debug("%s " + fmt, self.address_string(), *args)

    return Handler
