from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from mfpp.errors import InvalidConfigError
from mfpp.masks import (
    MaskBatch,
    PyramidConfig,
    apply_mask,
    build_pyramid,
    gen_fragment_masks,
    gen_grid_masks,
    iter_fragment_masks,
    layer_mask_counts,
)
from mfpp.segmentation import SlicParams

from conftest import make_natural_image


def single_layer_pyramid(h=64, w=64, n_fragments=4, img=None):
    if img is None:
        img = np.full((h, w, 3), 0.5, dtype=np.float32)
    cfg = PyramidConfig(
        layer_fragment_counts=(n_fragments,),
        upscale_offset=1.0,
        n_masks_total=16,
    )
    pyr = build_pyramid(img, cfg, SlicParams(n_segments=n_fragments, sigma=0.0))
    return img, cfg, pyr


# ---------------------------------------------------------------------------
# config and pyramid


def test_pyramid_config_defaults():
    cfg = PyramidConfig()
    assert cfg.layer_fragment_counts == (50, 100, 200, 400, 800)
    assert cfg.upscale_offset == 2.2
    assert cfg.keep_prob == 0.5


def test_pyramid_config_validation():
    with pytest.raises(InvalidConfigError):
        PyramidConfig(layer_fragment_counts=())
    with pytest.raises(InvalidConfigError):
        PyramidConfig(upscale_offset=0.5)
    with pytest.raises(InvalidConfigError):
        PyramidConfig(keep_prob=1.5)
    with pytest.raises(InvalidConfigError):
        PyramidConfig(n_masks_total=0)


def test_single_layer_unit_scale_pyramid():
    _, _, pyr = single_layer_pyramid()
    assert pyr.canvas_size == (64, 64)
    assert len(pyr.layers) == 1
    assert pyr.layers[0].n_fragments == 4


def test_canvas_rounding():
    img = np.full((10, 10, 3), 0.3, dtype=np.float32)
    cfg = PyramidConfig(layer_fragment_counts=(4,), upscale_offset=2.2)
    pyr = build_pyramid(img, cfg, SlicParams(n_segments=4, sigma=0.0))
    assert pyr.canvas_size == (22, 22)
    assert pyr.layers[0].labels.shape == (22, 22)


def test_canvas_too_small_rejected():
    img = np.zeros((1, 1, 3), dtype=np.float32)
    cfg = PyramidConfig(layer_fragment_counts=(1,), upscale_offset=1.0)
    with pytest.raises(InvalidConfigError):
        build_pyramid(img, cfg, SlicParams(n_segments=1))


def test_full_default_pyramid_on_224():
    img = make_natural_image(21, 224, 224)
    cfg = PyramidConfig()
    pyr = build_pyramid(img, cfg, SlicParams())
    assert pyr.canvas_size == (493, 493)
    assert len(pyr.layers) == 5
    realized = [lm.n_fragments for lm in pyr.layers]
    for got, want in zip(realized, cfg.layer_fragment_counts):
        assert want / 2 <= got <= 2 * want
    assert realized == sorted(realized)


def test_layer_mask_counts_even_split():
    assert layer_mask_counts(10, 5) == [2, 2, 2, 2, 2]
    assert layer_mask_counts(11, 5) == [3, 2, 2, 2, 2]
    assert layer_mask_counts(3, 5) == [1, 1, 1, 0, 0]


# ---------------------------------------------------------------------------
# fragment masks


def test_keep_prob_one_yields_all_ones():
    img, cfg, pyr = single_layer_pyramid()
    cfg = PyramidConfig(
        layer_fragment_counts=(4,), upscale_offset=1.0, keep_prob=1.0,
        n_masks_total=8,
    )
    batch = gen_fragment_masks(pyr, cfg, (64, 64))
    assert np.all(batch.masks == 255)


def test_keep_prob_zero_yields_all_zeros():
    img, cfg, pyr = single_layer_pyramid()
    cfg = PyramidConfig(
        layer_fragment_counts=(4,), upscale_offset=1.0, keep_prob=0.0,
        n_masks_total=8,
    )
    batch = gen_fragment_masks(pyr, cfg, (64, 64))
    assert np.all(batch.masks == 0)


def test_per_pixel_keep_frequency():
    img, _, pyr = single_layer_pyramid(h=8, w=8)
    cfg = PyramidConfig(
        layer_fragment_counts=(4,), upscale_offset=1.0, keep_prob=0.5,
        n_masks_total=5000, seed=0,
    )
    batch = gen_fragment_masks(pyr, cfg, (8, 8))
    freq = batch.float_masks().mean(axis=0)
    assert freq.min() >= 0.48 and freq.max() <= 0.52
    # batch-wide mean is even tighter
    assert abs(batch.float_masks().mean() - 0.5) < 0.02


def test_masks_are_fragment_atomic_at_unit_scale():
    img = make_natural_image(5, 32, 32)
    cfg = PyramidConfig(
        layer_fragment_counts=(8,), upscale_offset=1.0, n_masks_total=64, seed=3,
    )
    pyr = build_pyramid(img, cfg, SlicParams(n_segments=8))
    batch = gen_fragment_masks(pyr, cfg, (32, 32))
    labels = pyr.layers[0].labels
    for i in range(len(batch)):
        for frag in range(pyr.layers[0].n_fragments):
            vals = np.unique(batch.masks[i][labels == frag])
            assert len(vals) == 1


def test_mask_reconstruction_from_provenance():
    img = make_natural_image(9, 24, 24)
    cfg = PyramidConfig(
        layer_fragment_counts=(4, 9), upscale_offset=1.5, n_masks_total=20, seed=11,
    )
    pyr = build_pyramid(img, cfg, SlicParams(n_segments=4))
    batch = gen_fragment_masks(pyr, cfg, (24, 24))
    for i, prov in enumerate(batch.provenance):
        lm = pyr.layers[prov.layer]
        rng = np.random.default_rng([cfg.seed, prov.stream])
        keep = rng.random(lm.n_fragments) < cfg.keep_prob
        oy, ox = prov.crop
        lut = np.where(keep, 255, 0).astype(np.uint8)
        expect = lut[lm.labels[oy : oy + 24, ox : ox + 24]]
        assert np.array_equal(expect, batch.masks[i])


def test_seed_determinism_and_order_independence():
    img = make_natural_image(2, 32, 32)
    cfg = PyramidConfig(
        layer_fragment_counts=(6,), upscale_offset=1.4, n_masks_total=40, seed=7,
    )
    pyr = build_pyramid(img, cfg, SlicParams(n_segments=6))
    a = gen_fragment_masks(pyr, cfg, (32, 32))
    b = gen_fragment_masks(pyr, cfg, (32, 32))
    assert np.array_equal(a.masks, b.masks)

    # reversed iteration order produces the same masks
    rev = {i: m for i, m, _ in iter_fragment_masks(pyr, cfg, (32, 32),
                                                   indices=range(39, -1, -1))}
    for i in range(40):
        assert np.array_equal(rev[i], a.masks[i])

    # and so does a thread pool over index chunks
    chunks = [range(0, 13), range(13, 26), range(26, 40)]
    out = np.empty_like(a.masks)

    def work(idx_range):
        for i, m, _ in iter_fragment_masks(pyr, cfg, (32, 32), indices=idx_range):
            out[i] = m

    with ThreadPoolExecutor(max_workers=3) as pool:
        list(pool.map(work, chunks))
    assert np.array_equal(out, a.masks)


def test_every_pixel_covered():
    img, _, pyr = single_layer_pyramid(h=16, w=16, n_fragments=4)
    cfg = PyramidConfig(
        layer_fragment_counts=(4,), upscale_offset=1.0, keep_prob=0.3,
        n_masks_total=1000,
    )
    batch = gen_fragment_masks(pyr, cfg, (16, 16))
    assert np.all(batch.masks.any(axis=0))


def test_target_larger_than_canvas_rejected():
    img, cfg, pyr = single_layer_pyramid(h=16, w=16)
    with pytest.raises(InvalidConfigError):
        gen_fragment_masks(pyr, cfg, (32, 32))


# ---------------------------------------------------------------------------
# grid masks


def test_grid_single_cell_keep_one():
    batch = gen_grid_masks(4, (1, 1), 1.0, (16, 16), seed=0)
    assert np.all(batch.masks == 255)


def test_grid_masks_continuous_range():
    batch = gen_grid_masks(64, (7, 7), 0.5, (64, 64), seed=1)
    f = batch.float_masks()
    assert f.min() >= 0.0 and f.max() <= 1.0
    # bilinear upsampling produces intermediate values
    assert np.any((f > 0.05) & (f < 0.95))


def test_grid_per_pixel_mean():
    batch = gen_grid_masks(4000, (7, 7), 0.5, (56, 56), seed=0)
    mean = batch.float_masks().mean(axis=0)
    assert mean.min() >= 0.47 and mean.max() <= 0.53


def test_grid_mask_determinism():
    a = gen_grid_masks(16, (7, 7), 0.5, (32, 32), seed=9)
    b = gen_grid_masks(16, (7, 7), 0.5, (32, 32), seed=9)
    assert np.array_equal(a.masks, b.masks)


# ---------------------------------------------------------------------------
# apply_mask


def test_apply_all_ones_identity():
    img = make_natural_image(1, 8, 8)
    out = apply_mask(img, np.full((8, 8), 255, np.uint8))
    assert np.allclose(out, img)


def test_apply_all_zeros_blackout():
    img = make_natural_image(1, 8, 8)
    out = apply_mask(img, np.zeros((8, 8), np.uint8))
    assert np.all(out == 0)


def test_apply_halfplane():
    img = np.full((8, 8, 3), 0.8, dtype=np.float32)
    mask = np.zeros((8, 8), dtype=np.float32)
    mask[:, :4] = 1.0
    out = apply_mask(img, mask)
    assert np.allclose(out[:, :4], 0.8)
    assert np.all(out[:, 4:] == 0.0)


def test_apply_dimension_mismatch():
    img = np.zeros((8, 8, 3), np.float32)
    with pytest.raises(InvalidConfigError):
        apply_mask(img, np.zeros((4, 4), np.uint8))
