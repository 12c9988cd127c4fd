"""SLIC superpixel segmentation with Gaussian pre-smoothing and connectivity cleanup.

The segmenter partitions an RGB image into compact, 4-connected fragments by
localized k-means over (L, a, b, y, x). Fragments are the atomic units that the
mask generator later toggles on and off, so the contract here is strict:
every pixel gets exactly one label, label ids are contiguous, every fragment is
connected, and the whole operation is deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d
from skimage import color as skcolor
from skimage import measure as skmeasure

from .errors import InvalidConfigError


def validate_image(img) -> np.ndarray:
    """Check an H x W x 3 RGB raster with intensities in [0, 1]; return float32."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidConfigError(f"expected an HxWx3 RGB image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidConfigError(f"image must be at least 1x1, got {arr.shape[:2]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidConfigError("image contains non-finite values")
    if float(arr.min()) < 0.0 or float(arr.max()) > 1.0:
        raise InvalidConfigError("image intensities must lie in [0, 1]")
    return np.ascontiguousarray(arr, dtype=np.float32)


@dataclass(frozen=True)
class SlicParams:
    """Knobs for the superpixel segmenter.

    sigma is the std-dev (pixels) of the Gaussian pre-smoothing and controls
    how smooth fragment boundaries come out; compactness trades spatial
    proximity against color similarity. The seed is recorded for provenance;
    the algorithm itself draws no random numbers.
    """

    n_segments: int = 100
    compactness: float = 10.0
    sigma: float = 1.0
    max_iters: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n_segments < 1:
            raise InvalidConfigError("n_segments must be a positive integer")
        if not (self.compactness > 0 and math.isfinite(self.compactness)):
            raise InvalidConfigError("compactness must be a positive real")
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise InvalidConfigError("sigma must be a non-negative real")
        if self.max_iters < 1:
            raise InvalidConfigError("max_iters must be a positive integer")


@dataclass(eq=False)
class LabelMap:
    """Per-pixel fragment ids over an image lattice.

    labels is an (H, W) int32 array with values in 0..n_fragments-1 forming a
    partition; after connectivity enforcement every fragment is 4-connected.
    """

    labels: np.ndarray
    n_fragments: int

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def validate(self) -> None:
        if self.labels.ndim != 2:
            raise InvalidConfigError("labels must be a 2-D array")
        if self.n_fragments < 1:
            raise InvalidConfigError("a LabelMap needs at least one fragment")
        present = np.unique(self.labels)
        expected = np.arange(self.n_fragments)
        if present.shape != expected.shape or not np.array_equal(present, expected):
            raise InvalidConfigError(
                f"label ids must be contiguous 0..{self.n_fragments - 1}"
            )

    def areas(self) -> np.ndarray:
        """Pixel count per fragment id."""
        return np.bincount(self.labels.ravel(), minlength=self.n_fragments)


def gaussian_smooth(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur per channel, kernel radius ceil(3*sigma).

    Edges are handled by clamping to the border pixel. sigma == 0 returns the
    input unchanged.
    """
    if sigma < 0:
        raise InvalidConfigError("sigma must be non-negative")
    if sigma == 0:
        return img
    radius = math.ceil(3.0 * sigma)
    arr = np.asarray(img, dtype=np.float32)
    out = gaussian_filter1d(arr, sigma, axis=0, mode="nearest", radius=radius)
    out = gaussian_filter1d(out, sigma, axis=1, mode="nearest", radius=radius)
    return out


def boundary_length(labels: np.ndarray) -> int:
    """Count of 4-neighbor pairs with differing labels (a boundary metric)."""
    horiz = int(np.count_nonzero(labels[:, 1:] != labels[:, :-1]))
    vert = int(np.count_nonzero(labels[1:, :] != labels[:-1, :]))
    return horiz + vert


def colorize_labels(lm: LabelMap, seed: int = 0) -> np.ndarray:
    """Render a label map as an RGB uint8 image with per-fragment random colors."""
    rng = np.random.default_rng(seed)
    palette = rng.integers(32, 256, size=(lm.n_fragments, 3), dtype=np.uint8)
    return palette[lm.labels]


def slic_segment(img: np.ndarray, params: SlicParams) -> LabelMap:
    """Segment an RGB image into roughly `n_segments` compact fragments.

    Pipeline: Gaussian pre-smoothing, RGB -> CIELab (D65 / sRGB), cluster
    centers seeded on a regular grid with step ~sqrt(H*W / n_segments) and
    nudged to the lowest-gradient pixel in a 3x3 neighborhood, then localized
    k-means: each pixel is assigned to the nearest center within the center's
    2Sx2S window under D^2 = d_lab^2 + (d_xy * m / S)^2, centers are updated to
    cluster means, and the loop stops when every center moves < 0.5 px or after
    max_iters. Connectivity enforcement merges undersized connected components
    into their largest neighbor. Deterministic: assignment ties go to the
    lowest center index, and no randomness is consumed.
    """
    arr = validate_image(img)
    lab = _prepare_lab(arr, params.sigma)
    return _segment_from_lab(lab, params)


def _prepare_lab(arr: np.ndarray, sigma: float) -> np.ndarray:
    """Smooth and convert to CIELab once; shared across pyramid layers."""
    smoothed = gaussian_smooth(arr, sigma)
    return skcolor.rgb2lab(smoothed.astype(np.float64)).astype(np.float32)


def _segment_from_lab(lab: np.ndarray, params: SlicParams) -> LabelMap:
    h, w = lab.shape[:2]
    if params.n_segments > h * w:
        raise InvalidConfigError(
            f"n_segments={params.n_segments} exceeds pixel count {h * w}"
        )
    labels = _slic_core(lab, params)
    raw = LabelMap(labels, n_fragments=int(labels.max()) + 1)
    min_size = max(1, int((h * w / params.n_segments) / 4))
    return enforce_connectivity(raw, min_size)


def _init_centers(lab: np.ndarray, n_segments: int) -> np.ndarray:
    """Grid-seeded centers as rows of (L, a, b, y, x), gradient-shifted.

    The grid uses per-axis steps H/ceil(H/S) and W/ceil(W/S) so that it covers
    the borders for any image size; the realized center count is in
    [n_segments, ~2*n_segments]. Each seed moves to the lowest-gradient pixel
    of its 3x3 neighborhood (gradient = squared Lab difference of the right
    and down neighbors, ties to the first position in row-major order).
    """
    h, w = lab.shape[:2]
    step = math.sqrt(h * w / n_segments)
    ny = max(1, math.ceil(h / step))
    nx = max(1, math.ceil(w / step))

    gy = np.zeros((h, w), dtype=np.float32)
    gx = np.zeros((h, w), dtype=np.float32)
    gy[:-1, :] = ((lab[1:, :] - lab[:-1, :]) ** 2).sum(axis=2)
    gx[:, :-1] = ((lab[:, 1:] - lab[:, :-1]) ** 2).sum(axis=2)
    grad = gy + gx

    centers = np.empty((ny * nx, 5), dtype=np.float32)
    idx = 0
    for i in range(ny):
        cy = int(np.round((i + 0.5) * h / ny - 0.5))
        for j in range(nx):
            cx = int(np.round((j + 0.5) * w / nx - 0.5))
            y0, y1 = max(0, cy - 1), min(h, cy + 2)
            x0, x1 = max(0, cx - 1), min(w, cx + 2)
            patch = grad[y0:y1, x0:x1]
            k = int(np.argmin(patch))
            by, bx = y0 + k // patch.shape[1], x0 + k % patch.shape[1]
            centers[idx, :3] = lab[by, bx]
            centers[idx, 3] = by
            centers[idx, 4] = bx
            idx += 1
    return centers


def _slic_core(lab: np.ndarray, params: SlicParams) -> np.ndarray:
    """Localized k-means over (L, a, b, y, x); returns raw int32 labels."""
    h, w = lab.shape[:2]
    step = math.sqrt(h * w / params.n_segments)
    spatial_w = np.float32((params.compactness / step) ** 2)
    centers = _init_centers(lab, params.n_segments)
    n = centers.shape[0]
    win = max(1, math.ceil(step))

    chan = [np.ascontiguousarray(lab[:, :, i]) for i in range(3)]
    ys = np.arange(h, dtype=np.float32)
    xs = np.arange(w, dtype=np.float32)
    y_flat = np.repeat(np.arange(h, dtype=np.float64), w)
    x_flat = np.tile(np.arange(w, dtype=np.float64), h)
    chan_flat = [c.ravel().astype(np.float64) for c in chan]
    labels = np.full((h, w), -1, dtype=np.int32)
    dist = np.empty((h, w), dtype=np.float32)
    # scratch buffers for the per-center window ops (the loop runs tens of
    # thousands of times; allocations would dominate)
    side = 2 * win + 1
    dbuf = np.empty((side, side), dtype=np.float32)
    tbuf = np.empty((side, side), dtype=np.float32)
    ubuf = np.empty((side, side), dtype=bool)

    for _ in range(params.max_iters):
        dist.fill(np.inf)
        labels.fill(-1)
        for c in range(n):
            cy = float(centers[c, 3])
            cx = float(centers[c, 4])
            y0 = max(0, int(round(cy)) - win)
            y1 = min(h, int(round(cy)) + win + 1)
            x0 = max(0, int(round(cx)) - win)
            x1 = min(w, int(round(cx)) + win + 1)
            bh, bw = y1 - y0, x1 - x0
            d = dbuf[:bh, :bw]
            t = tbuf[:bh, :bw]
            np.subtract(chan[0][y0:y1, x0:x1], centers[c, 0], out=d)
            np.multiply(d, d, out=d)
            np.subtract(chan[1][y0:y1, x0:x1], centers[c, 1], out=t)
            np.multiply(t, t, out=t)
            d += t
            np.subtract(chan[2][y0:y1, x0:x1], centers[c, 2], out=t)
            np.multiply(t, t, out=t)
            d += t
            d_y = (ys[y0:y1] - np.float32(cy)) ** 2
            d_x = (xs[x0:x1] - np.float32(cx)) ** 2
            np.add(d_y[:, None], d_x[None, :], out=t)
            np.multiply(t, spatial_w, out=t)
            d += t
            window = dist[y0:y1, x0:x1]
            upd = ubuf[:bh, :bw]
            np.less(d, window, out=upd)
            np.copyto(window, d, where=upd)
            np.copyto(labels[y0:y1, x0:x1], c, where=upd)

        unassigned = labels < 0
        if np.any(unassigned):
            _assign_stragglers(lab, labels, centers, spatial_w, unassigned)

        flat = labels.ravel()
        counts = np.bincount(flat, minlength=n).astype(np.float64)
        sums = np.empty((n, 5), dtype=np.float64)
        for i in range(3):
            sums[:, i] = np.bincount(flat, weights=chan_flat[i], minlength=n)
        sums[:, 3] = np.bincount(flat, weights=y_flat, minlength=n)
        sums[:, 4] = np.bincount(flat, weights=x_flat, minlength=n)
        nonempty = counts > 0
        new_centers = centers.copy()
        new_centers[nonempty] = (
            sums[nonempty] / counts[nonempty, None]
        ).astype(np.float32)
        movement = np.sqrt(
            (new_centers[:, 3] - centers[:, 3]) ** 2
            + (new_centers[:, 4] - centers[:, 4]) ** 2
        )
        centers = new_centers
        if float(movement.max()) < 0.5:
            break

    return labels


def _assign_stragglers(lab, labels, centers, spatial_w, unassigned) -> None:
    """Assign pixels missed by every search window to their global nearest center."""
    pos = np.argwhere(unassigned)
    pix = lab[unassigned]
    d_lab = ((pix[:, None, :] - centers[None, :, :3]) ** 2).sum(axis=2)
    d_sp = (pos[:, 0:1] - centers[None, :, 3]) ** 2 + (
        pos[:, 1:2] - centers[None, :, 4]
    ) ** 2
    best = np.argmin(d_lab + d_sp * spatial_w, axis=1)
    labels[unassigned] = best.astype(np.int32)


def enforce_connectivity(lm: LabelMap, min_size: int) -> LabelMap:
    """Merge connected components smaller than min_size into neighbors.

    Components of the input partition are found with 4-connectivity; each one
    smaller than min_size is merged into its largest adjacent component
    (ties to the lowest component id). Output labels are re-compacted to
    0..n-1 in row-major first-occurrence order, so an already-connected input
    comes back unchanged up to renumbering.
    """
    comp = skmeasure.label(lm.labels, connectivity=1, background=-1)
    m = int(comp.max())
    sizes = np.bincount(comp.ravel(), minlength=m + 1).astype(np.int64)

    right = np.stack([comp[:, :-1].ravel(), comp[:, 1:].ravel()], axis=1)
    down = np.stack([comp[:-1, :].ravel(), comp[1:, :].ravel()], axis=1)
    pairs = np.concatenate([right, down], axis=0)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    if pairs.size:
        lo = pairs.min(axis=1).astype(np.int64)
        hi = pairs.max(axis=1).astype(np.int64)
        keys = np.unique(lo * (m + 1) + hi)
        pairs = np.stack([keys // (m + 1), keys % (m + 1)], axis=1)

    neighbors: list[set[int]] = [set() for _ in range(m + 1)]
    for a, b in pairs:
        neighbors[int(a)].add(int(b))
        neighbors[int(b)].add(int(a))

    parent = np.arange(m + 1)

    def find(c: int) -> int:
        while parent[c] != c:
            parent[c] = parent[parent[c]]
            c = parent[c]
        return c

    for c in range(1, m + 1):
        root = find(c)
        if sizes[root] >= min_size:
            continue
        cand = {find(nb) for nb in neighbors[root]} - {root}
        if not cand:
            continue
        target = max(cand, key=lambda r: (sizes[r], -r))
        parent[root] = target
        sizes[target] += sizes[root]
        neighbors[target] |= neighbors[root]

    roots = np.array([find(c) for c in range(m + 1)])
    resolved = roots[comp]
    uniq, first = np.unique(resolved, return_index=True)
    order = uniq[np.argsort(first)]
    remap = np.empty(m + 1, dtype=np.int32)
    remap[order] = np.arange(len(order), dtype=np.int32)
    new_labels = remap[resolved]
    out = LabelMap(new_labels, n_fragments=len(order))
    out.validate()
    return out
