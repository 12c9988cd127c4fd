"""Image preprocessing: raw [0, 1] RGB batches to normalized model input.

The wire protocol delivers images at whatever resolution the client chose;
the classifiers expect square NCHW tensors normalized with the ImageNet
channel statistics.  The whole frame is resized (bilinear, antialiased)
rather than center-cropped: saliency clients perturb pixels everywhere in
the frame, and a crop would silently disconnect border pixels from the
scores.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
INPUT_SIZE = 224

_MEAN = torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
_STD = torch.tensor(IMAGENET_STD).view(1, 3, 1, 1)


def to_model_input(batch: np.ndarray, size: int = INPUT_SIZE) -> torch.Tensor:
    """Convert a (B, H, W, 3) [0, 1] RGB array to a (B, 3, size, size) tensor.

    Steps: NHWC->NCHW, bilinear antialiased resize to (size, size) when the
    input is not already that shape, then per-channel ImageNet mean/std
    normalization.  Always returns float32.
    """
    arr = np.ascontiguousarray(batch, dtype=np.float32)
    if arr.ndim != 4 or arr.shape[3] != 3 or min(arr.shape[:3]) < 1:
        raise ValueError(f"batch must have shape (B, H, W, 3), got {arr.shape}")
    x = torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()
    if x.shape[2] != size or x.shape[3] != size:
        x = F.interpolate(
            x, size=(size, size), mode="bilinear",
            align_corners=False, antialias=True,
        )
    return (x - _MEAN) / _STD
