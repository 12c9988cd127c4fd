"""Black-box predictors: a remote inference client plus in-process toys.

The explainer treats the model as an opaque function Phi mapping a batch of
RGB images in [0, 1] to one row of class scores per image.  Two families are
provided:

* :class:`RemotePredictor` speaks a small binary HTTP protocol (see
  ``encode_predict_request`` for the framing) against an external model
  server, with bounded retries and a per-batch timeout.
* Toy predictors built by :func:`make_toy` are pure numpy functions used by
  tests and oracles: a constant score, the mean intensity of a fixed
  rectangle, or a linear function of per-fragment mean intensities.

Preprocessing (mean/std normalization, channel order) is the server's
responsibility; the client sends raw [0, 1] RGB and uses the returned scores
as-is.
"""

from __future__ import annotations

import json
import math
import os
import struct
import threading
import time
import uuid
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import requests

from .errors import InvalidConfigError, ProtocolError, TransportError
from .segmentation import LabelMap

_HEADER_LEN = struct.Struct("<Q")

DEFAULT_ENDPOINT_ENV = "MFPP_MODEL_URL"


def _validate_batch(batch: np.ndarray, require_finite: bool = True) -> np.ndarray:
    arr = np.ascontiguousarray(batch, dtype=np.float32)
    if arr.ndim != 4 or arr.shape[3] != 3:
        raise InvalidConfigError(
            f"batch must have shape (B, H, W, 3), got {arr.shape}"
        )
    if arr.shape[0] < 1:
        raise InvalidConfigError("batch must contain at least one image")
    if require_finite:
        # single-pass check: NaN propagates through min, inf caps max
        lo, hi = float(arr.min()), float(arr.max())
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise InvalidConfigError("batch contains non-finite values")
    return arr


# ---------------------------------------------------------------------------
# wire framing
#
# Both directions share one frame layout: an 8-byte little-endian unsigned
# header length, a JSON header, then a raw little-endian float32 tensor.
# Requests carry {"b","h","w","c","dtype"} and a (B,H,W,3) image tensor;
# responses carry {"b","classes"} and a (B,C) score matrix.


def _frame(header: dict, payload: bytes) -> bytes:
    head = json.dumps(header, separators=(",", ":")).encode("utf-8")
    return _HEADER_LEN.pack(len(head)) + head + payload


def _unframe(buf: bytes) -> tuple[dict, bytes]:
    if len(buf) < _HEADER_LEN.size:
        raise ProtocolError(f"frame truncated: {len(buf)} bytes, need >= 8")
    (hlen,) = _HEADER_LEN.unpack_from(buf)
    if len(buf) < _HEADER_LEN.size + hlen:
        raise ProtocolError(
            f"frame truncated: header claims {hlen} bytes, "
            f"{len(buf) - _HEADER_LEN.size} available"
        )
    try:
        header = json.loads(buf[_HEADER_LEN.size : _HEADER_LEN.size + hlen])
    except ValueError as exc:
        raise ProtocolError(f"invalid JSON header: {exc}") from exc
    if not isinstance(header, dict):
        raise ProtocolError("JSON header must be an object")
    return header, buf[_HEADER_LEN.size + hlen :]


def encode_predict_request(batch: np.ndarray) -> bytes:
    """Serialize a (B, H, W, 3) float32 batch into the wire frame."""
    arr = _validate_batch(batch)
    b, h, w, _ = arr.shape
    header = {"b": b, "h": h, "w": w, "c": 3, "dtype": "f32"}
    return _frame(header, arr.astype("<f4", copy=False).tobytes())


def decode_predict_request(buf: bytes) -> np.ndarray:
    """Parse a request frame back into a (B, H, W, 3) float32 array."""
    header, payload = _unframe(buf)
    try:
        b, h, w, c = (int(header[k]) for k in ("b", "h", "w", "c"))
        dtype = header["dtype"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed request header {header!r}") from exc
    if c != 3 or dtype != "f32":
        raise ProtocolError(f"unsupported tensor layout c={c} dtype={dtype!r}")
    if b < 1 or h < 1 or w < 1:
        raise ProtocolError(f"non-positive dims b={b} h={h} w={w}")
    expected = b * h * w * 3 * 4
    if len(payload) != expected:
        raise ProtocolError(
            f"payload length mismatch: expected {expected} bytes "
            f"for b={b} h={h} w={w}, got {len(payload)}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(b, h, w, 3).copy()


def encode_predict_response(scores: np.ndarray) -> bytes:
    """Serialize a (B, C) float32 score matrix into the wire frame."""
    arr = np.ascontiguousarray(scores, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidConfigError(f"scores must have shape (B, C), got {arr.shape}")
    header = {"b": int(arr.shape[0]), "classes": int(arr.shape[1])}
    return _frame(header, arr.astype("<f4", copy=False).tobytes())


def decode_predict_response(buf: bytes) -> np.ndarray:
    """Parse a response frame back into a (B, C) float32 array."""
    header, payload = _unframe(buf)
    try:
        b = int(header["b"])
        c = int(header["classes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed response header {header!r}") from exc
    if b < 1 or c < 1:
        raise ProtocolError(f"non-positive dims b={b} classes={c}")
    expected = b * c * 4
    if len(payload) != expected:
        raise ProtocolError(
            f"payload length mismatch: expected {expected} bytes "
            f"for b={b} classes={c}, got {len(payload)}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(b, c).copy()


# ---------------------------------------------------------------------------
# remote predictor


class RemotePredictor:
    """HTTP client for a model server speaking the binary predict protocol.

    Transient transport failures (connection errors, timeouts, HTTP 5xx) are
    retried up to ``retries`` times with exponential backoff; anything still
    failing raises :class:`TransportError`.  Malformed or inconsistent
    responses raise :class:`ProtocolError` immediately.  Handles are safe to
    share across threads; at most ``max_in_flight`` batches are kept on the
    wire concurrently.
    """

    def __init__(
        self,
        url: Optional[str] = None,
        timeout: float = 60.0,
        retries: int = 3,
        retry_delay: float = 0.5,
        max_in_flight: int = 4,
        session: Optional[requests.Session] = None,
    ):
        url = url or os.environ.get(DEFAULT_ENDPOINT_ENV)
        if not url:
            raise InvalidConfigError(
                "no endpoint: pass url= or set " + DEFAULT_ENDPOINT_ENV
            )
        if retries < 1:
            raise InvalidConfigError("retries must be >= 1")
        self.url = url.rstrip("/")
        self.timeout = float(timeout)
        self.retries = int(retries)
        self.retry_delay = float(retry_delay)
        self._session = session or requests.Session()
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._lock = threading.Lock()
        self._n_classes: Optional[int] = None

    def info(self) -> dict:
        """GET /v1/info: {classes, class_names, model}."""
        resp = self._session.get(self.url + "/v1/info", timeout=self.timeout)
        if resp.status_code != 200:
            raise TransportError(f"info failed with HTTP {resp.status_code}")
        return resp.json()

    def predict(self, batch: np.ndarray) -> np.ndarray:
        """Score a (B, H, W, 3) [0,1] RGB batch; returns (B, C) float32."""
        arr = _validate_batch(batch)
        body = encode_predict_request(arr)
        request_id = uuid.uuid4().hex
        headers = {
            "Content-Type": "application/octet-stream",
            "X-Request-Id": request_id,
        }
        last_err: Exception = TransportError("no attempts made")
        for attempt in range(self.retries):
            if attempt:
                time.sleep(self.retry_delay * 2 ** (attempt - 1))
            try:
                with self._gate:
                    resp = self._session.post(
                        self.url + "/v1/predict",
                        data=body,
                        headers=headers,
                        timeout=self.timeout,
                    )
            except requests.RequestException as exc:
                last_err = exc
                continue
            if resp.status_code >= 500:
                last_err = TransportError(
                    f"server error HTTP {resp.status_code}: {resp.text[:200]}"
                )
                continue
            if resp.status_code != 200:
                raise ProtocolError(
                    f"predict rejected with HTTP {resp.status_code}: "
                    f"{resp.text[:200]}"
                )
            echoed = resp.headers.get("X-Request-Id")
            if echoed is not None and echoed != request_id:
                raise ProtocolError(
                    f"response id {echoed!r} does not match request {request_id!r}"
                )
            return self._check_scores(decode_predict_response(resp.content), arr)
        raise TransportError(
            f"predict failed after {self.retries} attempts: {last_err}"
        )

    def _check_scores(self, scores: np.ndarray, batch: np.ndarray) -> np.ndarray:
        if scores.shape[0] != batch.shape[0]:
            raise ProtocolError(
                f"row count mismatch: sent {batch.shape[0]} images, "
                f"got {scores.shape[0]} score rows"
            )
        if not np.all(np.isfinite(scores)):
            raise ProtocolError("response contains non-finite scores")
        with self._lock:
            if self._n_classes is None:
                self._n_classes = scores.shape[1]
            elif scores.shape[1] != self._n_classes:
                raise ProtocolError(
                    f"class count changed mid-session: expected "
                    f"{self._n_classes}, got {scores.shape[1]}"
                )
        return scores


# ---------------------------------------------------------------------------
# toy predictors


@dataclass(frozen=True)
class ToyPredictorSpec:
    """Recipe for a deterministic in-process predictor.

    kind 'constant': every image scores `value` (scalar or per-class vector).
    kind 'region_mean': score is the channel-averaged mean intensity over the
        half-open pixel rectangle region=(y0, x0, y1, x1).
    kind 'fragment_linear': score is sum_f weights[f] * (mean intensity of
        fragment f of label_map); on a unit-intensity image under a binary
        fragment mask this equals the sum of kept weights exactly.
    """

    kind: str
    value: float | Sequence[float] = 1.0
    region: Optional[tuple[int, int, int, int]] = None
    weights: Optional[Sequence[float]] = None
    label_map: Optional[LabelMap] = None


class ConstantPredictor:
    def __init__(self, values: np.ndarray):
        self.values = values

    @property
    def n_classes(self) -> int:
        return self.values.size

    def predict(self, batch: np.ndarray) -> np.ndarray:
        arr = _validate_batch(batch, require_finite=False)
        return np.tile(self.values, (arr.shape[0], 1))


class RegionMeanPredictor:
    def __init__(self, region: tuple[int, int, int, int]):
        self.region = region
        self.n_classes = 1

    def predict(self, batch: np.ndarray) -> np.ndarray:
        # finiteness is checked on the window sums (NaN/inf propagate),
        # not with an extra pass over the whole batch
        arr = _validate_batch(batch, require_finite=False)
        y0, x0, y1, x1 = self.region
        h, w = arr.shape[1], arr.shape[2]
        if y1 > h or x1 > w:
            raise InvalidConfigError(
                f"region {self.region} exceeds image bounds ({h}, {w})"
            )
        window = arr[:, y0:y1, x0:x1, :]
        count = window[0].size
        sums = np.einsum("byxc->b", window, dtype=np.float64)
        if not np.all(np.isfinite(sums)):
            raise InvalidConfigError("batch window contains non-finite values")
        return (sums / count).astype(np.float32).reshape(-1, 1)


class FragmentLinearPredictor:
    def __init__(self, weights: np.ndarray, label_map: LabelMap):
        self.weights = weights
        self.label_map = label_map
        self.n_classes = 1
        self._flat = label_map.labels.ravel()
        self._counts = np.bincount(self._flat, minlength=label_map.n_fragments)

    def predict(self, batch: np.ndarray) -> np.ndarray:
        arr = _validate_batch(batch, require_finite=False)
        if arr.shape[1:3] != self.label_map.labels.shape:
            raise InvalidConfigError(
                f"image size {arr.shape[1:3]} does not match label map "
                f"{self.label_map.labels.shape}"
            )
        gray = arr.mean(axis=3, dtype=np.float64)
        out = np.empty((arr.shape[0], 1), dtype=np.float32)
        for i in range(arr.shape[0]):
            sums = np.bincount(
                self._flat, weights=gray[i].ravel(),
                minlength=self.label_map.n_fragments,
            )
            means = sums / self._counts
            out[i, 0] = float(self.weights @ means)
        if not np.all(np.isfinite(out)):
            raise InvalidConfigError("batch contains non-finite values")
        return out


def make_toy(spec: ToyPredictorSpec):
    """Build an in-process predictor from a ToyPredictorSpec."""
    if spec.kind == "constant":
        values = np.atleast_1d(np.asarray(spec.value, dtype=np.float32))
        if values.ndim != 1 or values.size < 1 or not np.all(np.isfinite(values)):
            raise InvalidConfigError(f"invalid constant value {spec.value!r}")
        return ConstantPredictor(values)
    if spec.kind == "region_mean":
        if spec.region is None:
            raise InvalidConfigError("region_mean requires region=(y0, x0, y1, x1)")
        y0, x0, y1, x1 = (int(v) for v in spec.region)
        if not (0 <= y0 < y1 and 0 <= x0 < x1):
            raise InvalidConfigError(f"degenerate region {spec.region}")
        return RegionMeanPredictor((y0, x0, y1, x1))
    if spec.kind == "fragment_linear":
        if spec.weights is None or spec.label_map is None:
            raise InvalidConfigError(
                "fragment_linear requires weights and label_map"
            )
        weights = np.asarray(spec.weights, dtype=np.float64)
        if weights.ndim != 1 or not np.all(np.isfinite(weights)):
            raise InvalidConfigError("weights must be a finite 1-D sequence")
        if weights.size != spec.label_map.n_fragments:
            raise InvalidConfigError(
                f"{weights.size} weights for {spec.label_map.n_fragments} fragments"
            )
        return FragmentLinearPredictor(weights, spec.label_map)
    raise InvalidConfigError(f"unknown toy predictor kind {spec.kind!r}")


def predict_batch(predictor, batch: np.ndarray) -> np.ndarray:
    """Score a batch with any predictor handle (remote or toy)."""
    return predictor.predict(batch)
