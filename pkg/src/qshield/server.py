"""HTTP/JSON front of the gateway on the stdlib threading server.

Every handler thread reads one coherent model snapshot through the gateway,
so a hot swap mid-burst is invisible to in-flight requests. The review UI,
when configured, is served as static assets from ServiceConfig.static_dir.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlsplit

from .gateway import (
    ConflictError,
    Gateway,
    NoModelError,
    RetrainInProgressError,
    UnknownItemError,
)

logger = logging.getLogger(__name__)

_LABEL_ROUTE = re.compile(r"^/v1/review/([^/]+)/label$")

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".json": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
}


class BodyTooLargeError(ValueError):
    pass


class _GatewayHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    gateway: Gateway  # set on the server class

    def log_message(self, fmt, *args):
        logger.debug("%s %s", self.address_string(), fmt % args)

    # -- plumbing ---------------------------------------------------------

    def _send_json(self, code: int, obj) -> None:
        body = json.dumps(obj).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_error_json(self, code: int, message: str) -> None:
        self._send_json(code, {"error": message})

    def _read_json_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if length > self.gateway.config.max_body_bytes:
            raise BodyTooLargeError(f"body of {length} bytes exceeds cap")
        raw = self.rfile.read(length) if length else b""
        if not raw:
            raise ValueError("empty request body")
        try:
            obj = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValueError(f"body is not valid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ValueError("body must be a JSON object")
        return obj

    def _dispatch(self, handler) -> None:
        try:
            handler()
        except BodyTooLargeError as exc:
            self._send_error_json(413, str(exc))
        except UnknownItemError as exc:
            self._send_error_json(404, f"unknown review item {exc.args[0]!r}")
        except RetrainInProgressError as exc:
            self._send_error_json(409, str(exc))
        except ConflictError as exc:
            self._send_error_json(409, str(exc))
        except NoModelError as exc:
            self._send_error_json(503, str(exc))
        except ValueError as exc:
            self._send_error_json(400, str(exc))
        except BrokenPipeError:
            pass
        except Exception:
            logger.exception("internal error handling %s %s", self.command, self.path)
            self._send_error_json(500, "internal error")

    # -- routes -----------------------------------------------------------

    def do_POST(self) -> None:
        self._dispatch(self._route_post)

    def do_GET(self) -> None:
        self._dispatch(self._route_get)

    def _route_post(self) -> None:
        path = urlsplit(self.path).path
        if path == "/v1/classify":
            body = self._read_json_body()
            if "text" not in body or not isinstance(body["text"], str):
                raise ValueError('body must carry a string "text" field')
            self._send_json(200, self.gateway.classify(body["text"]))
            return
        match = _LABEL_ROUTE.match(path)
        if match:
            body = self._read_json_body()
            if "label" not in body or not isinstance(body["label"], str):
                raise ValueError('body must carry a string "label" field')
            item = self.gateway.submit_label(match.group(1), body["label"])
            self._send_json(200, item.to_dict())
            return
        if path == "/v1/admin/retrain":
            self._send_json(200, self.gateway.trigger_retrain(mode="manual"))
            return
        self._send_error_json(404, f"no such endpoint: POST {path}")

    def _route_get(self) -> None:
        parts = urlsplit(self.path)
        path = parts.path
        if path == "/v1/review/pending":
            query = parse_qs(parts.query)
            limit = int(query.get("limit", ["50"])[0])
            cursor = query.get("cursor", [None])[0]
            items, next_cursor = self.gateway.list_pending(limit=limit, cursor=cursor)
            self._send_json(200, {"items": [i.to_dict() for i in items], "next_cursor": next_cursor})
            return
        if path == "/v1/admin/status":
            self._send_json(200, self.gateway.status())
            return
        if path == "/v1/metrics":
            self._send_json(200, self.gateway.metrics())
            return
        if self._serve_static(path):
            return
        self._send_error_json(404, f"no such endpoint: GET {path}")

    def _serve_static(self, path: str) -> bool:
        static_dir = self.gateway.config.static_dir
        if static_dir is None:
            return False
        root = Path(static_dir).resolve()
        rel = path.lstrip("/") or "index.html"
        target = (root / rel).resolve()
        if root not in target.parents and target != root:
            return False
        if target.is_dir():
            target = target / "index.html"
        if not target.is_file():
            return False
        body = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", _CONTENT_TYPES.get(target.suffix, "application/octet-stream"))
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)
        return True


class GatewayServer:
    """Threading HTTP server bound to a Gateway; start()/stop() for embedding."""

    def __init__(self, gateway: Gateway, host: str | None = None, port: int | None = None):
        handler = type("BoundHandler", (_GatewayHandler,), {"gateway": gateway})
        self.gateway = gateway
        self._httpd = ThreadingHTTPServer(
            (host if host is not None else gateway.config.host,
             port if port is not None else gateway.config.port),
            handler,
        )
        self._httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._httpd.server_address[:2]

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def start(self) -> "GatewayServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, name="qshield-http", daemon=True)
        self._thread.start()
        logger.info("listening on %s", self.url)
        return self

    def serve_forever(self) -> None:
        logger.info("listening on %s", self.url)
        self._httpd.serve_forever()

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=10)
