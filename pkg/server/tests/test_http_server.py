"""HTTP behavior of the endpoint, exercised with a tiny deterministic model.

Covers the info document, score framing, softmax vs logits, determinism,
the 400/404/405/500 error paths, request-id echoing, and concurrent
clients.
"""

import http.client
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from urllib.parse import urlparse

import numpy as np
import pytest
import requests
import torch

from model_server import ServerConfig, decode_response, encode_request
from server_test_utils import exploding_bundle, running_server, tiny_bundle


@pytest.fixture(scope="module")
def tiny_url():
    with running_server(bundle=tiny_bundle(n_classes=7, seed=0)) as url:
        yield url


def _batch(seed: int, shape=(2, 16, 16, 3)) -> np.ndarray:
    return np.random.default_rng(seed).random(shape, dtype=np.float32)


def _predict(url: str, body: bytes, headers=None) -> requests.Response:
    return requests.post(
        url + "/v1/predict",
        data=body,
        headers=headers or {"Content-Type": "application/octet-stream"},
        timeout=30,
    )


def test_info_reports_vocabulary(tiny_url):
    resp = requests.get(tiny_url + "/v1/info", timeout=10)
    assert resp.status_code == 200
    assert resp.headers["Content-Type"].startswith("application/json")
    info = resp.json()
    assert info["classes"] == 7
    assert info["model"] == "tiny"
    assert len(info["class_names"]) == 7
    assert all(isinstance(n, str) for n in info["class_names"])


def test_predict_returns_probability_rows(tiny_url):
    resp = _predict(tiny_url, encode_request(_batch(0)))
    assert resp.status_code == 200
    assert resp.headers["Content-Type"] == "application/octet-stream"
    scores = decode_response(resp.content)
    assert scores.shape == (2, 7)
    assert np.all(np.isfinite(scores))
    assert np.all(scores >= 0)
    assert np.allclose(scores.sum(axis=1), 1.0, atol=1e-5)


def test_no_softmax_mode_emits_logits():
    bundle = tiny_bundle(n_classes=7, seed=0)
    batch = _batch(0)
    with running_server(bundle=bundle, softmax=False) as url:
        logits = decode_response(_predict(url, encode_request(batch)).content)
    with running_server(bundle=bundle) as url:
        probs = decode_response(_predict(url, encode_request(batch)).content)
    assert not np.allclose(logits.sum(axis=1), 1.0, atol=1e-3)
    renorm = torch.softmax(torch.from_numpy(logits), dim=1).numpy()
    assert np.allclose(renorm, probs, atol=1e-6)


def test_identical_payloads_get_identical_responses(tiny_url):
    body = encode_request(_batch(1))
    first = _predict(tiny_url, body)
    second = _predict(tiny_url, body)
    assert first.content == second.content


def test_identical_images_in_one_batch_score_identically(tiny_url):
    one = _batch(2, shape=(1, 20, 20, 3))
    batch = np.repeat(one, 4, axis=0)
    scores = decode_response(_predict(tiny_url, encode_request(batch)).content)
    assert all(np.array_equal(scores[i], scores[0]) for i in range(4))


def test_request_id_is_echoed(tiny_url):
    headers = {
        "Content-Type": "application/octet-stream",
        "X-Request-Id": "abc-123",
    }
    ok = _predict(tiny_url, encode_request(_batch(3)), headers)
    assert ok.headers.get("X-Request-Id") == "abc-123"
    bad = _predict(tiny_url, b"junk", headers)
    assert bad.status_code == 400
    assert bad.headers.get("X-Request-Id") == "abc-123"


@pytest.mark.parametrize(
    "body,fragment",
    [
        (b"", "truncated"),
        (b"\x00" * 7, "truncated"),
        (struct.pack("<Q", 4) + b"nope", "malformed frame"),
        (
            struct.pack("<Q", 2) + b"{}" + b"\x00" * 12,
            "malformed frame",
        ),
        (
            # header fine, payload shorter than the dims require
            encode_request(np.zeros((1, 4, 4, 3), dtype=np.float32))[:-8],
            "payload length mismatch",
        ),
    ],
)
def test_malformed_frames_get_http_400_with_diagnostic(tiny_url, body, fragment):
    resp = _predict(tiny_url, body)
    assert resp.status_code == 400
    assert fragment in resp.text


def test_bad_dtype_header_gets_http_400(tiny_url):
    head = json.dumps(
        {"b": 1, "h": 2, "w": 2, "c": 3, "dtype": "f64"},
        separators=(",", ":"),
    ).encode()
    body = struct.pack("<Q", len(head)) + head + b"\x00" * 96
    resp = _predict(tiny_url, body)
    assert resp.status_code == 400
    assert "unsupported tensor layout" in resp.text


def test_unknown_paths_and_methods_are_rejected(tiny_url):
    assert requests.get(tiny_url + "/nope", timeout=10).status_code == 404
    assert requests.post(tiny_url + "/nope", data=b"", timeout=10).status_code == 404
    assert requests.get(tiny_url + "/v1/predict", timeout=10).status_code == 405
    assert requests.post(tiny_url + "/v1/info", data=b"", timeout=10).status_code == 405


def test_missing_content_length_gets_http_400(tiny_url):
    parsed = urlparse(tiny_url)
    conn = http.client.HTTPConnection(parsed.hostname, parsed.port, timeout=10)
    try:
        conn.putrequest("POST", "/v1/predict", skip_accept_encoding=True)
        conn.putheader("Content-Type", "application/octet-stream")
        conn.endheaders()
        resp = conn.getresponse()
        assert resp.status == 400
        assert b"Content-Length" in resp.read()
    finally:
        conn.close()


def test_oversized_body_declaration_gets_http_400(tiny_url):
    headers = {
        "Content-Type": "application/octet-stream",
        "Content-Length": str(1 << 40),
    }
    parsed = urlparse(tiny_url)
    conn = http.client.HTTPConnection(parsed.hostname, parsed.port, timeout=10)
    try:
        conn.putrequest("POST", "/v1/predict")
        for k, v in headers.items():
            conn.putheader(k, v)
        conn.endheaders()
        resp = conn.getresponse()
        assert resp.status == 400
        assert b"outside" in resp.read()
    finally:
        conn.close()


def test_inference_failure_gets_http_500():
    with running_server(bundle=exploding_bundle()) as url:
        resp = _predict(url, encode_request(_batch(4)))
    assert resp.status_code == 500
    assert "inference failed" in resp.text


def test_concurrent_clients_get_consistent_scores(tiny_url):
    body = encode_request(_batch(5, shape=(3, 24, 24, 3)))
    reference = _predict(tiny_url, body).content

    def one_call(_):
        resp = _predict(tiny_url, body)
        return resp.status_code, resp.content

    with ThreadPoolExecutor(max_workers=8) as pool:
        results = list(pool.map(one_call, range(24)))
    assert all(code == 200 for code, _ in results)
    assert all(content == reference for _, content in results)
