"""CLI behavior: flag mapping, error exit codes, console-script launch."""

import re
import signal
import subprocess
import sys
import time

import pytest
import requests

from model_server import ServerConfig, WeightsUnavailableError
from model_server import cli


def test_flags_map_onto_server_config(monkeypatch):
    seen = {}
    monkeypatch.setattr(cli, "serve", lambda cfg: seen.setdefault("cfg", cfg))
    code = cli.main(
        [
            "--model", "vgg16",
            "--host", "0.0.0.0",
            "--port", "9001",
            "--no-softmax",
            "--weights", "random",
            "--seed", "11",
            "--workers", "2",
        ]
    )
    assert code == 0
    cfg = seen["cfg"]
    assert cfg == ServerConfig(
        model="vgg16", host="0.0.0.0", port=9001, device="cpu",
        softmax=False, weights="random", workers=2, seed=11,
    )


def test_defaults_request_pretrained_softmax_resnet(monkeypatch):
    seen = {}
    monkeypatch.setattr(cli, "serve", lambda cfg: seen.setdefault("cfg", cfg))
    assert cli.main([]) == 0
    cfg = seen["cfg"]
    assert (cfg.model, cfg.weights, cfg.softmax) == ("resnet50", "pretrained", True)


def test_unknown_model_is_an_argparse_error():
    with pytest.raises(SystemExit) as exc:
        cli.main(["--model", "alexnet"])
    assert exc.value.code == 2


def test_invalid_config_exits_2(monkeypatch, capsys):
    assert cli.main(["--workers", "0"]) == 2
    assert "workers" in capsys.readouterr().err


def test_unavailable_weights_exit_2(monkeypatch, capsys):
    def boom(cfg):
        raise WeightsUnavailableError("checkpoint missing")

    monkeypatch.setattr(cli, "serve", boom)
    assert cli.main(["--model", "resnet50"]) == 2
    assert "checkpoint missing" in capsys.readouterr().err


def test_console_entry_point_serves_requests():
    # real process, random weights, ephemeral port announced on stderr
    proc = subprocess.Popen(
        [
            sys.executable, "-m", "model_server.cli",
            "--model", "resnet50", "--weights", "random", "--port", "0",
        ],
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
    )
    url = None
    try:
        deadline = time.monotonic() + 120
        while time.monotonic() < deadline:
            line = proc.stderr.readline()
            if not line:
                time.sleep(0.1)
                continue
            m = re.search(r"serving resnet50 on (http://[\d.]+:\d+)", line)
            if m:
                url = m.group(1)
                break
        assert url, "server never announced its address"
        info = requests.get(url + "/v1/info", timeout=30).json()
        assert info == {
            "classes": 1000,
            "class_names": info["class_names"],
            "model": "resnet50",
        }
        assert len(info["class_names"]) == 1000
    finally:
        proc.send_signal(signal.SIGINT)
        try:
            proc.wait(timeout=30)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
