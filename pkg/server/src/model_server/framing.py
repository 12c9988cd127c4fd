"""Binary wire framing for the predict protocol (serving side).

Both directions share one frame layout: an 8-byte little-endian unsigned
header length, a UTF-8 JSON header, then a raw little-endian float32 tensor.
Requests carry ``{"b","h","w","c","dtype"}`` and a (B, H, W, 3) image
tensor; responses carry ``{"b","classes"}`` and a (B, C) score matrix.

This codec is implemented independently of any client library so the two
sides can be checked against each other byte for byte.
"""

from __future__ import annotations

import json
import struct

import numpy as np

_HEADER_LEN = struct.Struct("<Q")

# Upper bound on the JSON header; real headers are < 100 bytes, so anything
# larger is a corrupt or hostile length field.
_MAX_HEADER_BYTES = 1 << 16


class FramingError(ValueError):
    """A frame that does not follow the wire layout."""


def _frame(header: dict, payload: bytes) -> bytes:
    head = json.dumps(header, separators=(",", ":")).encode("utf-8")
    return _HEADER_LEN.pack(len(head)) + head + payload


def _unframe(buf: bytes) -> tuple[dict, bytes]:
    if len(buf) < _HEADER_LEN.size:
        raise FramingError(f"frame truncated: {len(buf)} bytes, need >= 8")
    (hlen,) = _HEADER_LEN.unpack_from(buf)
    if hlen > _MAX_HEADER_BYTES:
        raise FramingError(f"header length {hlen} exceeds {_MAX_HEADER_BYTES}")
    if len(buf) < _HEADER_LEN.size + hlen:
        raise FramingError(
            f"frame truncated: header claims {hlen} bytes, "
            f"{len(buf) - _HEADER_LEN.size} available"
        )
    try:
        header = json.loads(buf[_HEADER_LEN.size : _HEADER_LEN.size + hlen])
    except ValueError as exc:
        raise FramingError(f"invalid JSON header: {exc}") from exc
    if not isinstance(header, dict):
        raise FramingError("JSON header must be an object")
    return header, buf[_HEADER_LEN.size + hlen :]


def encode_request(batch: np.ndarray) -> bytes:
    """Serialize a (B, H, W, 3) float32 image batch into a request frame."""
    arr = np.ascontiguousarray(batch, dtype=np.float32)
    if arr.ndim != 4 or arr.shape[3] != 3 or arr.shape[0] < 1:
        raise FramingError(f"batch must have shape (B, H, W, 3), got {arr.shape}")
    b, h, w, _ = arr.shape
    header = {"b": b, "h": h, "w": w, "c": 3, "dtype": "f32"}
    return _frame(header, arr.astype("<f4", copy=False).tobytes())


def decode_request(buf: bytes) -> np.ndarray:
    """Parse a request frame into a writable (B, H, W, 3) float32 array.

    Raises :class:`FramingError` for any deviation from the layout,
    including non-finite pixel values (the protocol carries images in
    [0, 1], so NaN/inf can only come from a broken client).
    """
    header, payload = _unframe(buf)
    try:
        b, h, w, c = (int(header[k]) for k in ("b", "h", "w", "c"))
        dtype = header["dtype"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FramingError(f"malformed request header {header!r}") from exc
    if c != 3 or dtype != "f32":
        raise FramingError(f"unsupported tensor layout c={c} dtype={dtype!r}")
    if b < 1 or h < 1 or w < 1:
        raise FramingError(f"non-positive dims b={b} h={h} w={w}")
    expected = b * h * w * 3 * 4
    if len(payload) != expected:
        raise FramingError(
            f"payload length mismatch: expected {expected} bytes "
            f"for b={b} h={h} w={w}, got {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(b, h, w, 3).copy()
    if not np.all(np.isfinite(arr)):
        raise FramingError("image payload contains non-finite values")
    return arr


def encode_response(scores: np.ndarray) -> bytes:
    """Serialize a (B, C) float32 score matrix into a response frame."""
    arr = np.ascontiguousarray(scores, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise FramingError(f"scores must have shape (B, C), got {arr.shape}")
    header = {"b": int(arr.shape[0]), "classes": int(arr.shape[1])}
    return _frame(header, arr.astype("<f4", copy=False).tobytes())


def decode_response(buf: bytes) -> np.ndarray:
    """Parse a response frame into a (B, C) float32 array."""
    header, payload = _unframe(buf)
    try:
        b = int(header["b"])
        c = int(header["classes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FramingError(f"malformed response header {header!r}") from exc
    if b < 1 or c < 1:
        raise FramingError(f"non-positive dims b={b} classes={c}")
    expected = b * c * 4
    if len(payload) != expected:
        raise FramingError(
            f"payload length mismatch: expected {expected} bytes "
            f"for b={b} classes={c}, got {len(payload)}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(b, c).copy()
