"""Serve any in-process backend over the wire protocol (stdlib HTTP server).

Used to expose the deterministic mock for protocol-conformance tests and the
``mock-serve`` CLI command.  Supports per-path fault injection so client
retry behaviour can be exercised over a real socket.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import protocol
from .backend import Backend, GeneratedImage
from .errors import BassError, ProtocolError


class WireApp:
    """Maps wire-protocol requests onto a Backend instance."""

    def __init__(self, backend: Backend):
        self.backend = backend

    def handle(self, path: str, body: dict) -> dict:
        if "batch" in body:
            items = body["batch"]
            if not isinstance(items, list):
                raise ProtocolError("'batch' must be an array")
            results = []
            for item in items:
                try:
                    results.append(self._handle_one(path, item))
                except Exception as exc:  # per-item isolation
                    code = "bad_request" if isinstance(exc, BassError) else "internal"
                    results.append({"error": protocol.error_payload(code, str(exc))})
            return {"batch": results}
        return self._handle_one(path, body)

    def _handle_one(self, path: str, body: dict) -> dict:
        if not isinstance(body, dict):
            raise ProtocolError("request body must be a JSON object")
        backend = self.backend
        if path == protocol.PATH_ENCODE:
            prompt = _required(body, "prompt", str)
            return protocol.embedding_payload(backend.encode_text(prompt))
        if path == protocol.PATH_GENERATE:
            payload = _required(body, "embedding", dict)
            seed = _required(body, "seed", int)
            emb = protocol.embedding_from_payload(
                payload, prompt_text="", encoder_id=backend.info().encoder_id
            )
            image = backend.generate_image(emb, seed)
            return {"png": protocol.bytes_to_b64(image.data)}
        if path == protocol.PATH_FEATURES_IMAGE:
            image = self._image_from(body)
            return protocol.feature_payload(backend.image_features(image))
        if path == protocol.PATH_FEATURES_TEXT:
            prompt = _required(body, "prompt", str)
            return protocol.feature_payload(backend.text_features(prompt))
        if path == protocol.PATH_SEGMENT:
            image = self._image_from(body)
            seg = backend.segment(image)
            return {
                "components": [
                    protocol.feature_payload(feat, mask_area_px=area)
                    for feat, area in zip(seg.features, seg.mask_areas_px)
                ]
            }
        raise ProtocolError(f"unknown path {path}")

    def _image_from(self, body: dict) -> GeneratedImage:
        data = protocol.b64_to_bytes(_required(body, "png", str))
        return GeneratedImage.from_bytes(data, self.backend.info().image_media_type)


def _required(body: dict, key: str, kind: type):
    if key not in body:
        raise ProtocolError(f"missing field {key!r}")
    value = body[key]
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ProtocolError(f"field {key!r} must be an integer")
        return value
    if not isinstance(value, kind):
        raise ProtocolError(f"field {key!r} must be {kind.__name__}")
    return value


class MockProtocolServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, backend: Backend, host: str = "127.0.0.1", port: int = 0):
        self.app = WireApp(backend)
        self.request_counts: dict[str, int] = {}
        self._faults: dict[str, list[int]] = {}
        self._lock = threading.Lock()
        super().__init__((host, port), _Handler)

    @property
    def base_url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def inject_failures(self, path: str, count: int, status: int = 503) -> None:
        """Make the next ``count`` requests to ``path`` fail with ``status``."""

        with self._lock:
            self._faults[path] = [count, status]

    def _note_request(self, path: str) -> int | None:
        """Count the request; return a status code if a fault should fire."""

        with self._lock:
            self.request_counts[path] = self.request_counts.get(path, 0) + 1
            fault = self._faults.get(path)
            if fault and fault[0] > 0:
                fault[0] -= 1
                return fault[1]
        return None


class _Handler(BaseHTTPRequestHandler):
    server: MockProtocolServer

    def log_message(self, format, *args):  # keep test output clean
        pass

    def _respond(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        fault = self.server._note_request(self.path)
        if fault is not None:
            self._respond(fault, protocol.error_payload("injected", "injected fault"))
            return
        if self.path == protocol.PATH_INFO:
            self._respond(200, self.server.app.backend.info().to_payload())
        else:
            self._respond(404, protocol.error_payload("not_found", self.path))

    def do_POST(self):
        fault = self.server._note_request(self.path)
        if fault is not None:
            self._respond(fault, protocol.error_payload("injected", "injected fault"))
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            body = json.loads(self.rfile.read(length) or b"{}")
        except (ValueError, json.JSONDecodeError) as exc:
            self._respond(400, protocol.error_payload("bad_request", str(exc)))
            return
        try:
            self._respond(200, self.server.app.handle(self.path, body))
        except BassError as exc:
            self._respond(400, protocol.error_payload("bad_request", str(exc)))
        except Exception as exc:  # pragma: no cover - defensive
            self._respond(500, protocol.error_payload("internal", str(exc)))


def start_server(backend: Backend, port: int = 0) -> tuple[MockProtocolServer, threading.Thread]:
    """Start a server on an ephemeral port; caller owns shutdown()."""

    server = MockProtocolServer(backend, port=port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread


def serve_blocking(backend: Backend, port: int, host: str = "127.0.0.1") -> None:
    server = MockProtocolServer(backend, host=host, port=port)
    try:
        server.serve_forever()
    finally:
        server.server_close()
