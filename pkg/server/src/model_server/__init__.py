"""Reference model server: torchvision classifiers behind a binary protocol.

Hosts an ImageNet classifier (VGG16 or ResNet50) on two HTTP endpoints:

* ``POST /v1/predict`` — body and response are binary frames: an 8-byte
  little-endian header length, a JSON header, then a raw little-endian
  float32 tensor.  Requests carry a (B, H, W, 3) batch of raw [0, 1] RGB
  images; responses carry a (B, C) score matrix.
* ``GET /v1/info`` — JSON ``{classes, class_names, model}``.

The server owns all preprocessing (resize to the model's input size,
ImageNet mean/std normalization, channel reordering) and by default emits
post-softmax probabilities; ``--no-softmax`` switches to raw logits.
"""

__version__ = "0.1.0"

from .app import build_server, serve
from .classifiers import (
    SUPPORTED_MODELS,
    ClassifierBundle,
    ServerConfig,
    WeightsUnavailableError,
    imagenet_class_names,
    load_classifier,
)
from .framing import (
    FramingError,
    decode_request,
    decode_response,
    encode_request,
    encode_response,
)
from .preprocess import IMAGENET_MEAN, IMAGENET_STD, INPUT_SIZE, to_model_input

__all__ = [
    "__version__",
    "SUPPORTED_MODELS",
    "ClassifierBundle",
    "FramingError",
    "IMAGENET_MEAN",
    "IMAGENET_STD",
    "INPUT_SIZE",
    "ServerConfig",
    "WeightsUnavailableError",
    "build_server",
    "decode_request",
    "decode_response",
    "encode_request",
    "encode_response",
    "imagenet_class_names",
    "load_classifier",
    "serve",
    "to_model_input",
]
