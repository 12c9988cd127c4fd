"""Command-line entry point: bring up one classifier endpoint.

Examples::

    model-server --model resnet50 --port 8500
    model-server --model vgg16 --port 8501 --no-softmax
    model-server --model resnet50 --weights random --seed 7   # test endpoint

Exit codes: 0 on clean shutdown (Ctrl-C), 2 on configuration or weight
loading failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from .classifiers import SUPPORTED_MODELS, ServerConfig, WeightsUnavailableError
from .app import serve


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="model-server",
        description=(
            "Serve a torchvision ImageNet classifier over the binary "
            "predict protocol (POST /v1/predict, GET /v1/info)."
        ),
    )
    parser.add_argument(
        "--model", choices=SUPPORTED_MODELS, default="resnet50",
        help="classifier architecture to host (default: resnet50)",
    )
    parser.add_argument(
        "--host", default="127.0.0.1",
        help="interface to bind (default: 127.0.0.1)",
    )
    parser.add_argument(
        "--port", type=int, default=8500,
        help="TCP port to bind; 0 picks a free port (default: 8500)",
    )
    parser.add_argument(
        "--device", default="cpu",
        help="torch device for inference (default: cpu)",
    )
    parser.add_argument(
        "--no-softmax", action="store_true",
        help="emit raw logits instead of post-softmax probabilities",
    )
    parser.add_argument(
        "--weights", choices=("pretrained", "random"), default="pretrained",
        help=(
            "'pretrained' loads the published ImageNet checkpoint; "
            "'random' serves seeded random weights for protocol testing"
        ),
    )
    parser.add_argument(
        "--seed", type=int, default=0,
        help="seed for random weight initialization (default: 0)",
    )
    parser.add_argument(
        "--workers", type=int, default=4,
        help="max concurrent requests admitted to inference (default: 4)",
    )
    parser.add_argument(
        "-v", "--verbose", action="store_true",
        help="log every request",
    )
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        cfg = ServerConfig(
            model=args.model,
            host=args.host,
            port=args.port,
            device=args.device,
            softmax=not args.no_softmax,
            weights=args.weights,
            workers=args.workers,
            seed=args.seed,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        serve(cfg)
    except WeightsUnavailableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
