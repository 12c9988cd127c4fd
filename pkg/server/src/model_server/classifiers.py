"""Classifier construction: torchvision VGG16 / ResNet50 bundles.

Weights come either from the published ImageNet checkpoints
(``weights="pretrained"``) or from seeded random initialization
(``weights="random"``).  Random weights give a fully functional,
deterministic endpoint — same vocabulary, same shapes — for protocol and
integration testing on machines without the checkpoint files; its scores
are of course meaningless for real images.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torchvision.models import (
    ResNet50_Weights,
    VGG16_Weights,
    resnet50,
    vgg16,
)

SUPPORTED_MODELS = ("vgg16", "resnet50")
_WEIGHT_MODES = ("pretrained", "random")

_BUILDERS = {"vgg16": vgg16, "resnet50": resnet50}
_CHECKPOINTS = {
    "vgg16": VGG16_Weights.IMAGENET1K_V1,
    "resnet50": ResNet50_Weights.IMAGENET1K_V1,
}


class WeightsUnavailableError(RuntimeError):
    """Pretrained checkpoint files could not be obtained."""


@dataclass(frozen=True)
class ServerConfig:
    """Everything needed to bring up one serving endpoint."""

    model: str = "resnet50"
    host: str = "127.0.0.1"
    port: int = 8500
    device: str = "cpu"
    softmax: bool = True
    weights: str = "pretrained"
    workers: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.model not in SUPPORTED_MODELS:
            raise ValueError(
                f"model must be one of {SUPPORTED_MODELS}, got {self.model!r}"
            )
        if self.weights not in _WEIGHT_MODES:
            raise ValueError(
                f"weights must be one of {_WEIGHT_MODES}, got {self.weights!r}"
            )
        if not 0 <= self.port <= 65535:
            raise ValueError(f"port must be in [0, 65535], got {self.port}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")


@dataclass
class ClassifierBundle:
    """A ready-to-serve classifier: eval-mode module plus its vocabulary."""

    model_name: str
    module: torch.nn.Module
    class_names: list[str] = field(repr=False)
    device: str = "cpu"

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


def imagenet_class_names() -> list[str]:
    """The 1000 ImageNet-1k category names, in model output order."""
    return list(_CHECKPOINTS["resnet50"].meta["categories"])


def load_classifier(cfg: ServerConfig) -> ClassifierBundle:
    """Build the configured torchvision model in eval mode on cfg.device.

    Pretrained mode loads the published ImageNet checkpoint (downloading
    into the torch hub cache if absent); failure to obtain it raises
    :class:`WeightsUnavailableError`.  Random mode seeds torch's global
    generator with ``cfg.seed`` before construction so the weights are
    reproducible.
    """
    builder = _BUILDERS[cfg.model]
    if cfg.weights == "pretrained":
        try:
            module = builder(weights=_CHECKPOINTS[cfg.model])
        except Exception as exc:
            raise WeightsUnavailableError(
                f"could not load pretrained {cfg.model} weights ({exc}); "
                f"place the checkpoint under "
                f"{torch.hub.get_dir()}/checkpoints/ or run with "
                f"--weights random for a functional test endpoint"
            ) from exc
    else:
        torch.manual_seed(cfg.seed)
        module = builder(weights=None)
    module.eval()
    module.to(cfg.device)
    return ClassifierBundle(
        model_name=cfg.model,
        module=module,
        class_names=imagenet_class_names(),
        device=cfg.device,
    )
