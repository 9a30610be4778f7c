"""Synthetic STEM-like test images: Gaussian atom columns on a lattice over a smooth background."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .image import normalize
from .seeds import derive_seed


def stem_like(h: int = 512, w: int = 512, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    spacing = rng.uniform(16.0, 40.0)
    angle = rng.uniform(0, np.pi)
    aspect = rng.uniform(0.8, 1.25)
    sigma = spacing * rng.uniform(0.18, 0.3)

    # lattice points covering the image with a margin
    n = int(np.hypot(h, w) / spacing) + 4
    i, j = np.meshgrid(np.arange(-n, n + 1), np.arange(-n, n + 1))
    ax = np.array([np.cos(angle), np.sin(angle)]) * spacing
    ay = np.array([-np.sin(angle), np.cos(angle)]) * spacing * aspect
    pts = i.ravel()[:, None] * ax + j.ravel()[:, None] * ay
    pts += np.array([w / 2, h / 2]) + rng.normal(0, 0.4, pts.shape)
    inside = (pts[:, 0] > -3 * sigma) & (pts[:, 0] < w + 3 * sigma) & \
        (pts[:, 1] > -3 * sigma) & (pts[:, 1] < h + 3 * sigma)
    pts = pts[inside]
    amp = rng.uniform(0.6, 1.0, len(pts))
    amp[rng.random(len(pts)) < 0.03] = 0.0  # vacancies

    # bilinear splat of column intensities, then blur into Gaussian columns
    pad = int(4 * sigma) + 2
    grid = np.zeros((h + 2 * pad, w + 2 * pad))
    x, y = pts[:, 0] + pad, pts[:, 1] + pad
    x0, y0 = np.floor(x).astype(int), np.floor(y).astype(int)
    fx, fy = x - x0, y - y0
    for dy, dx, wt in ((0, 0, (1 - fx) * (1 - fy)), (0, 1, fx * (1 - fy)),
                       (1, 0, (1 - fx) * fy), (1, 1, fx * fy)):
        np.add.at(grid, (y0 + dy, x0 + dx), amp * wt)
    atoms = ndimage.gaussian_filter(grid, sigma)[pad:pad + h, pad:pad + w]
    atoms /= atoms.max() if atoms.max() > 0 else 1.0

    img = atoms * (0.75 + 0.25 * _smooth_field(rng, h, w)) + 0.25 * _smooth_field(rng, h, w)
    return normalize(img)


def _smooth_field(rng, h, w, cells: int = 6):
    """Long-wavelength random field scaled into [-1, 1]: a cubic upsampling of coarse noise."""
    coarse = rng.normal(size=(cells, cells))
    f = ndimage.zoom(coarse, (h / cells, w / cells), order=3, mode="reflect", grid_mode=True)
    f = f[:h, :w] - f.mean()
    return f / (np.abs(f).max() or 1.0)


def synthetic_corpus(n: int, h: int = 512, w: int = 512, seed: int = 0) -> list[np.ndarray]:
    return [stem_like(h, w, derive_seed(seed, i)) for i in range(n)]
