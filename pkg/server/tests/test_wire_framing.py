"""Unit tests for the server's frame codec, against hand-built byte strings.

The golden frames are assembled in the tests with struct/json directly, so
the codec is checked against the wire layout itself rather than against its
own output.
"""

import json
import struct

import numpy as np
import pytest

from model_server import (
    FramingError,
    decode_request,
    decode_response,
    encode_request,
    encode_response,
)


def hand_frame(header: dict, payload: bytes) -> bytes:
    head = json.dumps(header, separators=(",", ":")).encode("utf-8")
    return struct.pack("<Q", len(head)) + head + payload


def test_decodes_hand_built_request_frame():
    rng = np.random.default_rng(0)
    arr = rng.random((2, 3, 4, 3), dtype=np.float32)
    buf = hand_frame(
        {"b": 2, "h": 3, "w": 4, "c": 3, "dtype": "f32"},
        arr.astype("<f4").tobytes(),
    )
    out = decode_request(buf)
    assert out.dtype == np.float32
    assert np.array_equal(out, arr)
    assert out.flags.writeable and out.flags.c_contiguous


def test_encoded_request_matches_hand_built_bytes():
    rng = np.random.default_rng(1)
    arr = rng.random((1, 5, 2, 3), dtype=np.float32)
    expected = hand_frame(
        {"b": 1, "h": 5, "w": 2, "c": 3, "dtype": "f32"},
        arr.astype("<f4").tobytes(),
    )
    assert encode_request(arr) == expected


def test_encoded_response_matches_hand_built_bytes():
    scores = np.arange(6, dtype=np.float32).reshape(2, 3)
    expected = hand_frame({"b": 2, "classes": 3}, scores.astype("<f4").tobytes())
    assert encode_response(scores) == expected


def test_decodes_hand_built_response_frame():
    scores = np.linspace(-1, 1, 8, dtype=np.float32).reshape(2, 4)
    buf = hand_frame({"b": 2, "classes": 4}, scores.astype("<f4").tobytes())
    assert np.array_equal(decode_response(buf), scores)


def test_randomized_round_trips_are_lossless():
    rng = np.random.default_rng(42)
    for _ in range(200):
        b = int(rng.integers(1, 4))
        h = int(rng.integers(1, 10))
        w = int(rng.integers(1, 10))
        c = int(rng.integers(1, 9))
        scale = np.float32(10.0 ** rng.uniform(-20, 20))
        batch = (rng.random((b, h, w, 3), dtype=np.float32) * scale).astype(
            np.float32
        )
        scores = (rng.standard_normal((b, c)).astype(np.float32) * scale).astype(
            np.float32
        )
        assert decode_request(encode_request(batch)).tobytes() == batch.tobytes()
        assert (
            decode_response(encode_response(scores)).tobytes() == scores.tobytes()
        )


def _valid_request_bytes() -> bytes:
    arr = np.full((1, 2, 2, 3), 0.5, dtype=np.float32)
    return encode_request(arr)


@pytest.mark.parametrize(
    "corrupt,match",
    [
        (lambda buf: buf[:5], "truncated"),
        (lambda buf: buf[:11], "truncated"),
        (lambda buf: struct.pack("<Q", 1 << 40) + buf[8:], "header length"),
        (
            lambda buf: struct.pack("<Q", 5) + b"{oops" + buf[8:],
            "invalid JSON",
        ),
        (lambda buf: hand_frame({}, b""), "malformed request header"),
        (
            lambda buf: struct.pack("<Q", 2) + b"[]" + b"\x00" * 4,
            "must be an object",
        ),
        (
            lambda buf: hand_frame(
                {"b": 1, "h": 2, "w": 2, "c": 4, "dtype": "f32"}, b"\x00" * 64
            ),
            "unsupported tensor layout",
        ),
        (
            lambda buf: hand_frame(
                {"b": 1, "h": 2, "w": 2, "c": 3, "dtype": "f64"}, b"\x00" * 96
            ),
            "unsupported tensor layout",
        ),
        (
            lambda buf: hand_frame(
                {"b": 0, "h": 2, "w": 2, "c": 3, "dtype": "f32"}, b""
            ),
            "non-positive dims",
        ),
        (
            lambda buf: hand_frame(
                {"b": 1, "h": -2, "w": 2, "c": 3, "dtype": "f32"}, b"\x00" * 48
            ),
            "non-positive dims",
        ),
        (lambda buf: buf + b"\x00\x00", "payload length mismatch"),
        (lambda buf: buf[:-4], "payload length mismatch"),
        (
            lambda buf: hand_frame(
                {"b": 1, "h": 1, "w": 1, "c": 3, "dtype": "f32"},
                np.array([np.nan, 0, 0], dtype="<f4").tobytes(),
            ),
            "non-finite",
        ),
        (
            lambda buf: hand_frame(
                {"b": 1, "h": 1, "w": 1, "c": 3, "dtype": "f32"},
                np.array([np.inf, 0, 0], dtype="<f4").tobytes(),
            ),
            "non-finite",
        ),
    ],
)
def test_malformed_request_frames_are_rejected(corrupt, match):
    buf = corrupt(_valid_request_bytes())
    with pytest.raises(FramingError, match=match):
        decode_request(buf)


@pytest.mark.parametrize(
    "buf,match",
    [
        (b"", "truncated"),
        (hand_frame({"b": 2}, b""), "malformed response header"),
        (hand_frame({"b": 0, "classes": 3}, b""), "non-positive dims"),
        (
            hand_frame({"b": 1, "classes": 3}, b"\x00" * 8),
            "payload length mismatch",
        ),
    ],
)
def test_malformed_response_frames_are_rejected(buf, match):
    with pytest.raises(FramingError, match=match):
        decode_response(buf)


def test_encode_request_rejects_bad_shapes():
    with pytest.raises(FramingError, match=r"\(B, H, W, 3\)"):
        encode_request(np.zeros((4, 4, 3), dtype=np.float32))
    with pytest.raises(FramingError, match=r"\(B, H, W, 3\)"):
        encode_request(np.zeros((1, 4, 4, 4), dtype=np.float32))


def test_encode_response_rejects_bad_shapes():
    with pytest.raises(FramingError, match=r"\(B, C\)"):
        encode_response(np.zeros(5, dtype=np.float32))
    with pytest.raises(FramingError, match=r"\(B, C\)"):
        encode_response(np.zeros((0, 5), dtype=np.float32))
