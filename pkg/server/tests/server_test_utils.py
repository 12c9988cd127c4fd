"""Shared helpers for the server tests.

Provides tiny deterministic classifier bundles (so HTTP-level behavior can
be tested without building a full torchvision network) and a context
manager that runs a live endpoint on an ephemeral port in a background
thread.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Optional

import torch

from model_server import ClassifierBundle, ServerConfig, build_server


class TinyClassifier(torch.nn.Module):
    """Deterministic toy head: per-channel global average pool, then a
    seeded fixed linear map to ``n_classes`` scores."""

    def __init__(self, n_classes: int = 7, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.weight = torch.nn.Parameter(torch.randn(n_classes, 3, generator=gen))
        self.bias = torch.nn.Parameter(torch.randn(n_classes, generator=gen))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        pooled = x.mean(dim=(2, 3))
        return pooled @ self.weight.T + self.bias


class ExplodingClassifier(torch.nn.Module):
    """Raises on every forward pass, for exercising the HTTP 500 path."""

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        raise RuntimeError("injected inference failure")


def tiny_bundle(n_classes: int = 7, seed: int = 0) -> ClassifierBundle:
    module = TinyClassifier(n_classes, seed).eval()
    names = [f"class-{i}" for i in range(n_classes)]
    return ClassifierBundle("tiny", module, names, "cpu")


def exploding_bundle() -> ClassifierBundle:
    return ClassifierBundle("broken", ExplodingClassifier().eval(), ["x"], "cpu")


@contextmanager
def running_server(
    bundle: Optional[ClassifierBundle] = None,
    cfg: Optional[ServerConfig] = None,
    **cfg_overrides,
):
    """Yield the base URL of a live endpoint bound to a free port."""
    if cfg is None:
        cfg = ServerConfig(port=0, weights="random", **cfg_overrides)
    server = build_server(cfg, bundle=bundle)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    host, port = server.server_address[:2]
    try:
        yield f"http://{host}:{port}"
    finally:
        server.shutdown()
        server.server_close()
        thread.join(timeout=10)
