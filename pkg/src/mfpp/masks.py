"""Multi-scale fragment pyramid and randomized perturbation masks.

Masks are built on an upscaled canvas and randomly cropped back to the target
size, so mask boundaries decorrelate from any fixed position. Fragment masks
drop whole superpixels (Bernoulli per fragment); the grid baseline drops grid
cells and bilinearly upsamples, which yields continuous-valued masks.

Every mask has its own RNG stream keyed by (batch seed, mask index), so a
batch is reproducible regardless of generation order or thread count. Masks
are stored one byte per pixel: fragment masks hold exactly {0, 255}, grid
masks are 8-bit fixed point over [0, 1].
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, Optional

import cv2
import numpy as np

from .errors import InvalidConfigError
from .segmentation import (
    LabelMap,
    SlicParams,
    _prepare_lab,
    _segment_from_lab,
    validate_image,
)

DEFAULT_LAYER_FRAGMENTS = (50, 100, 200, 400, 800)
MASK_SCALE = 255


@dataclass(frozen=True)
class PyramidConfig:
    """Mask-generation knobs: scales, canvas factor, keep rate, budget, seed."""

    layer_fragment_counts: tuple[int, ...] = DEFAULT_LAYER_FRAGMENTS
    upscale_offset: float = 2.2
    keep_prob: float = 0.5
    n_masks_total: int = 4000
    seed: int = 0

    def __post_init__(self):
        counts = tuple(int(c) for c in self.layer_fragment_counts)
        object.__setattr__(self, "layer_fragment_counts", counts)
        if len(counts) < 1 or any(c < 1 for c in counts):
            raise InvalidConfigError("layer_fragment_counts must be positive integers")
        if not (self.upscale_offset >= 1.0 and math.isfinite(self.upscale_offset)):
            raise InvalidConfigError("upscale_offset must be a real >= 1")
        if not 0.0 <= self.keep_prob <= 1.0:
            raise InvalidConfigError("keep_prob must lie in [0, 1]")
        if self.n_masks_total < 1:
            raise InvalidConfigError("n_masks_total must be positive")
        if self.seed < 0:
            raise InvalidConfigError("seed must be non-negative")

    @property
    def n_layers(self) -> int:
        return len(self.layer_fragment_counts)


@dataclass(eq=False)
class FragmentPyramid:
    """L label maps of one image at increasing fragment counts, on one canvas."""

    layers: list[LabelMap]
    canvas_size: tuple[int, int]


@dataclass(frozen=True)
class MaskProvenance:
    """Where a mask came from: source layer (None for grid masks), crop, stream key."""

    layer: Optional[int]
    crop: tuple[int, int]
    stream: int


@dataclass(eq=False)
class MaskBatch:
    """N byte-per-pixel masks over the target lattice plus their provenance."""

    masks: np.ndarray  # (N, H, W) uint8, 0..MASK_SCALE
    provenance: list[MaskProvenance]
    keep_prob: float
    seed: int

    def __len__(self) -> int:
        return self.masks.shape[0]

    def float_masks(self, sel=slice(None)) -> np.ndarray:
        """Masks as float32 in [0, 1]."""
        return self.masks[sel].astype(np.float32) / MASK_SCALE


def _mask_rng(seed: int, index: int) -> np.random.Generator:
    # one independent stream per mask, keyed on (seed, index)
    return np.random.default_rng([seed, index])


def layer_mask_counts(n_total: int, n_layers: int) -> list[int]:
    """Even split of the mask budget: floor(N/L) each, remainder to early layers."""
    base, rem = divmod(n_total, n_layers)
    return [base + (1 if i < rem else 0) for i in range(n_layers)]


def build_pyramid(
    img: np.ndarray, cfg: PyramidConfig, slic: SlicParams
) -> FragmentPyramid:
    """Segment the upscaled image at every configured fragment count.

    The input is bilinearly resized to round(u*H) x round(u*W) and segmented
    once per layer with shared SLIC parameters (smoothing and the Lab
    conversion are computed once).
    """
    arr = validate_image(img)
    h, w = arr.shape[:2]
    ch = int(round(cfg.upscale_offset * h))
    cw = int(round(cfg.upscale_offset * w))
    if ch < 2 or cw < 2:
        raise InvalidConfigError(f"mask canvas {ch}x{cw} is smaller than 2x2")
    if ch == h and cw == w:
        canvas = arr
    else:
        canvas = cv2.resize(arr, (cw, ch), interpolation=cv2.INTER_LINEAR)
    lab = _prepare_lab(canvas, slic.sigma)
    layers = [
        _segment_from_lab(lab, replace(slic, n_segments=count))
        for count in cfg.layer_fragment_counts
    ]
    return FragmentPyramid(layers=layers, canvas_size=(ch, cw))


def iter_fragment_masks(
    pyr: FragmentPyramid,
    cfg: PyramidConfig,
    target: tuple[int, int],
    indices: Optional[Iterable[int]] = None,
    dtype=np.uint8,
) -> Iterator[tuple[int, np.ndarray, MaskProvenance]]:
    """Yield (index, mask, provenance) without materializing the batch.

    Per mask: a Bernoulli(keep_prob) draw per fragment of its layer, then a
    uniformly random crop of the canvas down to the target size. The stream
    for mask i is keyed by (cfg.seed, i), so any index subset in any order
    produces the same masks.

    Masks are uint8 {0, 255} by default; dtype=np.float32 yields {0.0, 1.0}
    directly (same random draws, no quantization step).
    """
    ch, cw = pyr.canvas_size
    h, w = target
    if h > ch or w > cw:
        raise InvalidConfigError(f"target {h}x{w} exceeds canvas {ch}x{cw}")
    if dtype == np.uint8:
        on, off = MASK_SCALE, 0
    elif dtype == np.float32:
        on, off = 1.0, 0.0
    else:
        raise InvalidConfigError(f"mask dtype must be uint8 or float32")
    counts = layer_mask_counts(cfg.n_masks_total, cfg.n_layers)
    layer_of = np.repeat(np.arange(cfg.n_layers), counts)
    if indices is None:
        indices = range(cfg.n_masks_total)
    for i in indices:
        if not 0 <= i < cfg.n_masks_total:
            raise InvalidConfigError(f"mask index {i} outside budget")
        layer = int(layer_of[i])
        lm = pyr.layers[layer]
        rng = _mask_rng(cfg.seed, i)
        keep = rng.random(lm.n_fragments) < cfg.keep_prob
        oy = int(rng.integers(0, ch - h, endpoint=True))
        ox = int(rng.integers(0, cw - w, endpoint=True))
        lut = np.where(keep, on, off).astype(dtype)
        mask = lut[lm.labels[oy : oy + h, ox : ox + w]]
        yield i, mask, MaskProvenance(layer=layer, crop=(oy, ox), stream=i)


def gen_fragment_masks(
    pyr: FragmentPyramid, cfg: PyramidConfig, target: tuple[int, int]
) -> MaskBatch:
    """Materialize the full fragment-mask batch for the given target size."""
    h, w = target
    masks = np.empty((cfg.n_masks_total, h, w), dtype=np.uint8)
    provenance: list[MaskProvenance] = []
    for i, mask, prov in iter_fragment_masks(pyr, cfg, target):
        masks[i] = mask
        provenance.append(prov)
    return MaskBatch(
        masks=masks, provenance=provenance, keep_prob=cfg.keep_prob, seed=cfg.seed
    )


def gen_grid_masks(
    n_masks: int,
    cells: tuple[int, int],
    keep_prob: float,
    target: tuple[int, int],
    seed: int = 0,
) -> MaskBatch:
    """Grid-cell baseline masks: Bernoulli grid, bilinear upsample, random shift.

    An h x w cell grid is drawn per mask, upsampled to (H+CH) x (W+CW) with
    CH = ceil(H/h), CW = ceil(W/w), then cropped at a uniform offset in
    [0, CH] x [0, CW]. Values are continuous in [0, 1] (stored 8-bit fixed
    point).
    """
    gh, gw = cells
    if gh < 1 or gw < 1:
        raise InvalidConfigError("grid must be at least 1x1 cells")
    if not 0.0 <= keep_prob <= 1.0:
        raise InvalidConfigError("keep_prob must lie in [0, 1]")
    if n_masks < 1:
        raise InvalidConfigError("n_masks must be positive")
    h, w = target
    cell_h = math.ceil(h / gh)
    cell_w = math.ceil(w / gw)
    up_h, up_w = h + cell_h, w + cell_w

    masks = np.empty((n_masks, h, w), dtype=np.uint8)
    provenance: list[MaskProvenance] = []
    for i in range(n_masks):
        rng = _mask_rng(seed, i)
        grid = (rng.random((gh, gw)) < keep_prob).astype(np.float32)
        oy = int(rng.integers(0, cell_h, endpoint=True))
        ox = int(rng.integers(0, cell_w, endpoint=True))
        up = cv2.resize(grid, (up_w, up_h), interpolation=cv2.INTER_LINEAR)
        crop = up[oy : oy + h, ox : ox + w]
        masks[i] = np.rint(crop * MASK_SCALE).astype(np.uint8)
        provenance.append(MaskProvenance(layer=None, crop=(oy, ox), stream=i))
    return MaskBatch(masks=masks, provenance=provenance, keep_prob=keep_prob, seed=seed)


def apply_mask(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Element-wise product of an image with a mask; dropped pixels go black."""
    arr = np.asarray(img, dtype=np.float32)
    m = np.asarray(mask)
    if m.shape != arr.shape[:2]:
        raise InvalidConfigError(
            f"mask shape {m.shape} does not match image {arr.shape[:2]}"
        )
    if m.dtype == np.uint8:
        m = m.astype(np.float32) / MASK_SCALE
    else:
        m = m.astype(np.float32)
    return arr * m[:, :, None]


def dump_masks(batch: MaskBatch, out_dir: str) -> None:
    """Debug export: one grayscale PNG per mask plus a JSON manifest."""
    from PIL import Image

    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i in range(len(batch)):
        name = f"mask_{i:05d}.png"
        Image.fromarray(batch.masks[i], mode="L").save(os.path.join(out_dir, name))
        prov = batch.provenance[i]
        entries.append(
            {"file": name, "layer": prov.layer, "crop": list(prov.crop),
             "stream": prov.stream}
        )
    manifest = {"seed": batch.seed, "keep_prob": batch.keep_prob, "masks": entries}
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
