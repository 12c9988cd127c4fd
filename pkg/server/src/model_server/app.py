"""The HTTP endpoint: binary predict frames in, score frames out.

Request handling is stateless.  ``POST /v1/predict`` decodes the frame,
runs one forward pass, and returns the encoded scores; ``GET /v1/info``
reports the vocabulary.  Malformed framing is answered with HTTP 400 and a
plain-text diagnostic; an exception inside inference with HTTP 500.  An
``X-Request-Id`` header, when present, is echoed on every response.

Concurrency: the threading HTTP server gives each connection its own
thread; a bounded semaphore admits at most ``workers`` requests into the
inference section, and a lock serializes the actual forward pass so that
identical payloads produce bit-identical scores regardless of how requests
interleave.
"""

from __future__ import annotations

import json
import logging
import threading
import traceback
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

import numpy as np
import torch

from .classifiers import ClassifierBundle, ServerConfig, load_classifier
from .framing import FramingError, decode_request, encode_response
from .preprocess import to_model_input

log = logging.getLogger("model_server")

# Generous ceiling on request bodies; a 64-image batch of 500x500 RGB
# float32 is ~192 MiB, anything past this is a protocol error.
MAX_BODY_BYTES = 1 << 28


class InferenceRunner:
    """Thread-safe bridge from decoded image batches to score matrices."""

    def __init__(self, bundle: ClassifierBundle, softmax: bool, workers: int):
        self.bundle = bundle
        self.softmax = softmax
        self._gate = threading.BoundedSemaphore(workers)
        self._forward_lock = threading.Lock()

    @property
    def model_name(self) -> str:
        return self.bundle.model_name

    @property
    def class_names(self) -> list[str]:
        return self.bundle.class_names

    @property
    def n_classes(self) -> int:
        return self.bundle.n_classes

    def run(self, batch: np.ndarray) -> np.ndarray:
        with self._gate:
            x = to_model_input(batch)
            with self._forward_lock, torch.inference_mode():
                x = x.to(self.bundle.device)
                out = self.bundle.module(x)
                if self.softmax:
                    out = torch.softmax(out, dim=1)
                scores = out.cpu().numpy()
        return np.ascontiguousarray(scores, dtype=np.float32)


class _Handler(BaseHTTPRequestHandler):
    # HTTP/1.1 keeps client connections alive between batches; every
    # response below carries an exact Content-Length, as that requires.
    protocol_version = "HTTP/1.1"

    @property
    def runner(self) -> InferenceRunner:
        return self.server.runner  # type: ignore[attr-defined]

    def log_message(self, fmt, *args):  # route stdlib chatter to logging
        log.debug("%s - %s", self.address_string(), fmt % args)

    def _reply(self, code: int, body: bytes, content_type: str) -> None:
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        request_id = self.headers.get("X-Request-Id")
        if request_id is not None:
            self.send_header("X-Request-Id", request_id)
        self.end_headers()
        self.wfile.write(body)

    def _reply_text(self, code: int, message: str) -> None:
        self._reply(code, message.encode("utf-8"), "text/plain; charset=utf-8")

    def do_GET(self):
        if self.path.rstrip("/") != "/v1/info":
            code = 405 if self.path.rstrip("/") == "/v1/predict" else 404
            self._reply_text(code, f"GET not supported on {self.path!r}")
            return
        info = {
            "classes": self.runner.n_classes,
            "class_names": self.runner.class_names,
            "model": self.runner.model_name,
        }
        self._reply(200, json.dumps(info).encode("utf-8"), "application/json")

    def do_POST(self):
        if self.path.rstrip("/") != "/v1/predict":
            code = 405 if self.path.rstrip("/") == "/v1/info" else 404
            self._reply_text(code, f"POST not supported on {self.path!r}")
            return
        raw_length = self.headers.get("Content-Length")
        if raw_length is None:
            self._reply_text(400, "missing Content-Length")
            return
        try:
            length = int(raw_length)
        except ValueError:
            self._reply_text(400, f"bad Content-Length {raw_length!r}")
            return
        if length < 0 or length > MAX_BODY_BYTES:
            self._reply_text(
                400, f"body length {length} outside [0, {MAX_BODY_BYTES}]"
            )
            return
        body = self.rfile.read(length)
        if len(body) != length:
            self._reply_text(
                400, f"body truncated: got {len(body)} of {length} bytes"
            )
            return
        try:
            batch = decode_request(body)
        except FramingError as exc:
            self._reply_text(400, f"malformed frame: {exc}")
            return
        try:
            scores = self.runner.run(batch)
        except Exception:
            log.error("inference failed:\n%s", traceback.format_exc())
            self._reply_text(500, "inference failed; see server log")
            return
        self._reply(200, encode_response(scores), "application/octet-stream")

    # /v1/predict only accepts POST; make that explicit for GET probes
    def do_HEAD(self):
        self._reply_text(405, "HEAD not supported")


def build_server(
    cfg: ServerConfig, bundle: Optional[ClassifierBundle] = None
) -> ThreadingHTTPServer:
    """Construct the HTTP server without starting it.

    ``bundle`` overrides classifier loading, letting tests inject small or
    failing models; by default the configured torchvision model is built.
    Binding to port 0 picks a free port (see ``server.server_address``).
    """
    if bundle is None:
        bundle = load_classifier(cfg)
    server = ThreadingHTTPServer((cfg.host, cfg.port), _Handler)
    server.daemon_threads = True
    server.runner = InferenceRunner(bundle, cfg.softmax, cfg.workers)  # type: ignore[attr-defined]
    return server


def serve(cfg: ServerConfig, bundle: Optional[ClassifierBundle] = None) -> None:
    """Run the endpoint until interrupted."""
    server = build_server(cfg, bundle)
    host, port = server.server_address[:2]
    runner: InferenceRunner = server.runner  # type: ignore[attr-defined]
    log.info(
        "serving %s on http://%s:%d (classes=%d, softmax=%s, workers=%d)",
        runner.model_name, host, port, runner.n_classes,
        "on" if runner.softmax else "off", cfg.workers,
    )
    try:
        server.serve_forever()
    finally:
        server.server_close()
