"""HTTP JSON service for interactive prediction over a locked model.

Static threaded server from the standard library: the model is loaded
once, then shared immutably across request threads, so no locking is
needed beyond the atomic reference swap at load time. Missing request
fields are completed by the outcome-free companion chains; each request
defaults to a fresh random completion seed unless the caller pins one.
"""

from __future__ import annotations

import hashlib
import json
import mimetypes
import os
import random
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional, Union

from .errors import DurastackError, ServiceError
from .schema import ASA_LEVELS, PREDICT_FIELDS, SEX_LEVELS
from .stack import LockedModel, predict_one

DISCLAIMER = ("Research use only. This prediction service is not a medical "
              "device and must not be used for clinical decision making.")

_FIELD_SCHEMAS: dict[str, dict] = {
    "surgery_date": {"type": "date", "note": "weekday dates only (ISO 8601)"},
    "scheduled_duration_min": {"type": "number", "minimum": 0,
                               "exclusiveMinimum": True},
    "general_anaesthesia": {"type": "boolean"},
    "pos_supine": {"type": "boolean"},
    "pos_prone": {"type": "boolean"},
    "pos_sitting": {"type": "boolean"},
    "pos_lithotomy": {"type": "boolean"},
    "pos_lateral": {"type": "boolean"},
    "pos_other": {"type": "boolean"},
    "sex": {"type": "enum", "levels": list(SEX_LEVELS)},
    "age_years": {"type": "number", "minimum": 0},
    "bmi": {"type": "number", "minimum": 0, "exclusiveMinimum": True},
    "allergy": {"type": "boolean"},
    "infection": {"type": "boolean"},
    "comorbidity": {"type": "boolean"},
    "asa": {"type": "enum", "levels": list(ASA_LEVELS)},
}


def schema_document(model: Optional[LockedModel]) -> dict:
    fields = []
    for name in PREDICT_FIELDS:
        entry = {"name": name, "required": False}
        entry.update(_FIELD_SCHEMAS[name])
        fields.append(entry)
    doc = {"fields": fields, "schema_version": None}
    if model is not None:
        doc["schema_version"] = model.meta.fingerprint()[:12]
    return doc


def _json_bytes(payload: dict) -> bytes:
    return (json.dumps(payload, sort_keys=True) + "\n").encode("utf-8")


class _State:
    """Shared immutable-after-load service state."""

    def __init__(self, static_dir: Optional[str] = None):
        self.model: Optional[LockedModel] = None
        self.static_dir = os.path.realpath(static_dir) if static_dir else None
        self.schema_bytes = b""
        self.schema_etag = ""

    def load(self, model: LockedModel) -> None:
        self.schema_bytes = _json_bytes(schema_document(model))
        self.schema_etag = '"' + hashlib.sha256(self.schema_bytes).hexdigest()[:32] + '"'
        self.model = model


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    state: _State = None

    def log_message(self, fmt, *args):
        pass

    def _send(self, status: int, body: bytes,
              content_type: str = "application/json",
              extra: Optional[dict] = None) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        for key, value in (extra or {}).items():
            self.send_header(key, value)
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, status: int, payload: dict,
                   extra: Optional[dict] = None) -> None:
        self._send(status, _json_bytes(payload), extra=extra)

    # -- GET ---------------------------------------------------------------

    def do_GET(self):
        path = self.path.split("?", 1)[0]
        if path == "/api/v1/health":
            return self._handle_health()
        if path == "/api/v1/schema":
            return self._handle_schema()
        if path == "/api/v1/model":
            return self._handle_model()
        if path.startswith("/api/"):
            return self._send_json(404, {"error": "unknown endpoint"})
        return self._handle_static(path)

    def _handle_health(self):
        model = self.state.model
        if model is None:
            return self._send_json(503, {"status": "loading"})
        return self._send_json(200, {"status": "ok", "pipelines": model.m})

    def _handle_schema(self):
        if self.state.model is None:
            return self._send_json(503, {"status": "loading"})
        etag = self.state.schema_etag
        if self.headers.get("If-None-Match") == etag:
            self.send_response(304)
            self.send_header("ETag", etag)
            self.send_header("Content-Length", "0")
            self.end_headers()
            return
        return self._send(200, self.state.schema_bytes,
                          extra={"ETag": etag})

    def _handle_model(self):
        model = self.state.model
        if model is None:
            return self._send_json(503, {"status": "loading"})
        return self._send_json(200, {
            "model_version": model.model_version(),
            "format_version": model.format_version,
            "pipelines": model.m,
            "provenance": model.provenance,
            "disclaimer": DISCLAIMER,
        })

    def _handle_static(self, path: str):
        root = self.state.static_dir
        if root is None:
            return self._send_json(404, {"error": "no static bundle mounted"})
        rel = path.lstrip("/") or "index.html"
        full = os.path.realpath(os.path.join(root, rel))
        if not (full == root or full.startswith(root + os.sep)):
            return self._send_json(404, {"error": "not found"})
        if os.path.isdir(full):
            full = os.path.join(full, "index.html")
        if not os.path.isfile(full):
            return self._send_json(404, {"error": "not found"})
        ctype = mimetypes.guess_type(full)[0] or "application/octet-stream"
        with open(full, "rb") as fh:
            body = fh.read()
        return self._send(200, body, content_type=ctype)

    # -- POST --------------------------------------------------------------

    def do_POST(self):
        path = self.path.split("?", 1)[0]
        if path != "/api/v1/predict":
            return self._send_json(404, {"error": "unknown endpoint"})
        model = self.state.model
        if model is None:
            return self._send_json(503, {"status": "loading"})
        try:
            length = int(self.headers.get("Content-Length", "0"))
            raw = self.rfile.read(length)
            payload = json.loads(raw.decode("utf-8")) if raw else {}
        except (ValueError, UnicodeDecodeError):
            return self._send_json(400, {"errors": [
                {"field": "", "message": "request body must be a JSON object"},
            ]})
        if not isinstance(payload, dict):
            return self._send_json(400, {"errors": [
                {"field": "", "message": "request body must be a JSON object"},
            ]})
        seed = payload.pop("seed", None)
        if seed is not None and not isinstance(seed, int):
            return self._send_json(400, {"errors": [
                {"field": "seed", "message": "seed must be an integer"},
            ]})
        if seed is None:
            seed = random.SystemRandom().getrandbits(62)
        try:
            pred = predict_one(model, payload, seed)
        except DurastackError as exc:
            errors = getattr(exc, "errors", None)
            if errors is not None:
                return self._send_json(400, {"errors": [
                    {"field": fe.field, "message": fe.reason} for fe in errors
                ]})
            return self._send_json(500, {"error": str(exc)})
        return self._send_json(200, {
            "predicted_minutes": pred.predicted_minutes,
            "log_prediction_mean": pred.log_pred_mean,
            "per_pipeline_log": list(pred.log_pred_per_pipeline),
            "pipeline_spread": pred.pipeline_spread,
            "imputed_fields": list(pred.imputed_fields),
            "model_version": model.model_version(),
            "schema_version": model.meta.fingerprint()[:12],
        })


class _Server(ThreadingHTTPServer):
    # the socketserver default backlog of 5 drops handshakes under
    # concurrent load; burst clients then see connection resets
    request_queue_size = 128


class DurastackService:
    """Bind, serve, load, and shut down the prediction service."""

    def __init__(self, host: str = "127.0.0.1", port: int = 8321,
                 static_dir: Optional[str] = None):
        self.state = _State(static_dir=static_dir or None)
        handler = type("BoundHandler", (_Handler,), {"state": self.state})
        try:
            self.server = _Server((host, port), handler)
        except OSError as exc:
            raise ServiceError(
                f"cannot bind {host}:{port}: {exc}"
            ) from exc
        self.server.daemon_threads = False
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> tuple[str, int]:
        return self.server.server_address[:2]

    def start(self) -> None:
        self._thread = threading.Thread(target=self.server.serve_forever,
                                        daemon=True)
        self._thread.start()

    def load_model(self, model: Union[str, os.PathLike, LockedModel]) -> None:
        if isinstance(model, LockedModel):
            self.state.load(model)
            return
        from . import artifact

        self.state.load(artifact.load(model))

    def shutdown(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=10)

    def serve_until_interrupt(self) -> None:
        try:
            while True:
                self._thread.join(timeout=1)
        except KeyboardInterrupt:
            self.shutdown()
