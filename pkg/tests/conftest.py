import numpy as np
import pytest
from scipy.ndimage import gaussian_filter


def make_natural_image(seed: int, h: int = 64, w: int = 64) -> np.ndarray:
    """Procedural photo-like fixture: layered smooth color fields plus texture."""
    rng = np.random.default_rng(seed)
    img = np.zeros((h, w, 3), dtype=np.float64)
    for sigma, amp in ((max(h, w) / 6.0, 1.0), (max(h, w) / 16.0, 0.5), (1.5, 0.2)):
        layer = rng.normal(size=(h, w, 3))
        img += amp * gaussian_filter(layer, sigma=(sigma, sigma, 0))
    # a bright blob so there is at least one object-like structure
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = rng.integers(h // 4, 3 * h // 4), rng.integers(w // 4, 3 * w // 4)
    blob = np.exp(-(((yy - cy) / (h / 8)) ** 2 + ((xx - cx) / (w / 8)) ** 2))
    img += blob[:, :, None] * np.array([0.8, 0.6, 0.2])
    lo, hi = img.min(), img.max()
    img = 0.02 + 0.96 * (img - lo) / (hi - lo)
    return img.astype(np.float32)


@pytest.fixture
def natural_image():
    return make_natural_image(7, 96, 96)
