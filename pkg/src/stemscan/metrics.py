"""Evaluation statistics: MSE, masked RMSE, SSIM, error maps, histograms and KDE."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .image import save_image

LAPLACIAN_KERNEL = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def masked_rmse(a, b, mask, over_unscanned: bool = False) -> float:
    """RMS difference over mask-true pixels, or mask-false ones when over_unscanned."""
    a, b = _check_pair(a, b)
    bits = np.asarray(getattr(mask, "bits", mask), dtype=bool)
    if bits.shape != a.shape:
        raise ValueError(f"mask {bits.shape} does not match images {a.shape}")
    sel = ~bits if over_unscanned else bits
    if not sel.any():
        raise ValueError("empty selection")
    return float(np.sqrt(np.mean((a[sel] - b[sel]) ** 2)))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _valid_filter(x, g1):
    # separable weighted mean over every fully-contained window; both passes
    # run along contiguous rows
    half = len(g1) // 2
    y = ndimage.correlate1d(x, g1, axis=1, mode="constant")[:, half:-half]
    y = ndimage.correlate1d(np.ascontiguousarray(y.T), g1, axis=1, mode="constant")
    return y[:, half:-half].T


class SSIMReference:
    """SSIM against a fixed reference image, with the reference's local moments cached."""

    def __init__(self, ref, data_range: float = 1.0):
        self.ref = np.asarray(ref, dtype=np.float64)
        if self.ref.ndim != 2 or min(self.ref.shape) < SSIM_WINDOW:
            raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
        g = gaussian_window()[SSIM_WINDOW // 2]
        self.g1 = g / g.sum()
        self.c1 = (SSIM_K1 * data_range) ** 2
        self.c2 = (SSIM_K2 * data_range) ** 2
        self.mu = _valid_filter(self.ref, self.g1)
        self.var = _valid_filter(self.ref * self.ref, self.g1) - self.mu**2

    def map(self, a) -> np.ndarray:
        a, b = _check_pair(a, self.ref)
        mu_a, mu_b = _valid_filter(a, self.g1), self.mu
        var_a = _valid_filter(a * a, self.g1) - mu_a**2
        cov = _valid_filter(a * b, self.g1) - mu_a * mu_b
        num = (2 * mu_a * mu_b + self.c1) * (2 * cov + self.c2)
        den = (mu_a**2 + mu_b**2 + self.c1) * (var_a + self.var + self.c2)
        return num / den

    def __call__(self, a) -> float:
        return float(np.mean(self.map(a)))


def ssim_map(a, b, data_range: float = 1.0) -> np.ndarray:
    a, b = _check_pair(a, b)
    return SSIMReference(b, data_range).map(a)


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM over all 11x11 Gaussian (sigma 1.5) windows lying inside the image."""
    return float(np.mean(ssim_map(a, b, data_range)))


@dataclass
class ErrorMap:
    """Per-pixel sums of errors and squared errors over many image pairs.

    Storing sums keeps `merge` exact addition, so maps built by parallel
    workers combine in any order.
    """

    height: int
    width: int
    sum: np.ndarray = field(default=None)
    sum_sq: np.ndarray = field(default=None)
    n: int = 0

    def __post_init__(self):
        if self.sum is None:
            self.sum = np.zeros((self.height, self.width))
        if self.sum_sq is None:
            self.sum_sq = np.zeros((self.height, self.width))

    def accumulate(self, a, b, kind: str = "squared") -> "ErrorMap":
        a, b = _check_pair(a, b)
        if a.shape != (self.height, self.width):
            raise ValueError(f"images {a.shape} do not match map {(self.height, self.width)}")
        if kind == "squared":
            err = (a - b) ** 2
        elif kind == "absolute":
            err = np.abs(a - b)
        else:
            raise ValueError(f"unknown error kind {kind!r}")
        self.sum += err
        self.sum_sq += err * err
        self.n += 1
        return self

    def merge(self, other: "ErrorMap") -> "ErrorMap":
        if (other.height, other.width) != (self.height, self.width):
            raise ValueError("cannot merge maps of different size")
        return ErrorMap(self.height, self.width, self.sum + other.sum,
                        self.sum_sq + other.sum_sq, self.n + other.n)

    def mean(self) -> np.ndarray:
        if self.n < 1:
            raise ValueError("empty error map")
        return self.sum / self.n

    def std(self) -> np.ndarray:
        m = self.mean()
        return np.sqrt(np.maximum(self.sum_sq / self.n - m * m, 0.0))


def accumulate_error_map(emap: ErrorMap, a, b, kind: str = "squared") -> ErrorMap:
    return emap.accumulate(a, b, kind)


def laplacian(img: np.ndarray) -> np.ndarray:
    return ndimage.correlate(np.asarray(img, dtype=np.float64), LAPLACIAN_KERNEL, mode="reflect")


def laplacian_variance(emap) -> float:
    """Variance of the 5-point Laplacian of the mean map after standardizing it.

    Accepts an ErrorMap (which needs n >= 2) or a bare mean image.
    """
    if isinstance(emap, ErrorMap):
        if emap.n < 2:
            raise ValueError("need at least two accumulated pairs")
        m = emap.mean()
    else:
        m = np.asarray(emap, dtype=np.float64)
    sd = m.std()
    if sd == 0 or not np.isfinite(sd):
        raise ValueError("mean map is constant")
    z = (m - m.mean()) / sd
    return float(np.var(laplacian(z)))


def save_error_map(emap: ErrorMap, prefix) -> None:
    """Write mean and std maps as 16-bit PGMs with their affine ranges in a JSON sidecar."""
    prefix = Path(prefix)
    meta = {"n": emap.n}
    for name, m in (("mean", emap.mean()), ("std", emap.std())):
        lo, hi = float(m.min()), float(m.max())
        scaled = (m - lo) / (hi - lo) if hi > lo else np.zeros_like(m)
        save_image(scaled, prefix.with_name(f"{prefix.name}_{name}.pgm"), bit_depth=16)
        meta[name] = {"lo": lo, "hi": hi}
    prefix.with_name(prefix.name + ".json").write_text(json.dumps(meta, indent=2) + "\n")


@dataclass
class Histogram:
    lo: float
    hi: float
    bins: np.ndarray
    below: int = 0
    above: int = 0

    @property
    def n_bins(self) -> int:
        return len(self.bins)

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n_bins + 1)

    def to_csv(self) -> str:
        e = self.edges
        rows = ["bin_lo,bin_hi,count"]
        rows += [f"{e[i]!r},{e[i + 1]!r},{int(c)}" for i, c in enumerate(self.bins)]
        rows.append(f"below,,{self.below}")
        rows.append(f"above,,{self.above}")
        return "\n".join(rows) + "\n"


def histogram(samples, lo: float, hi: float, n_bins: int) -> Histogram:
    """Equispaced bins, left-closed except the last, which is closed on both ends."""
    if not hi > lo or n_bins < 1:
        raise ValueError("need hi > lo and n_bins >= 1")
    x = np.asarray(samples, dtype=np.float64).ravel()
    counts, _ = np.histogram(x, bins=n_bins, range=(lo, hi))
    return Histogram(lo, hi, counts, int(np.sum(x < lo)), int(np.sum(x > hi)))


def scott_bandwidth(samples) -> float:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples")
    sd = x.std(ddof=1)
    if sd == 0:
        raise ValueError("degenerate samples: zero spread")
    return float(sd * x.size ** (-1 / 5))


def kde_scott(samples, grid, chunk: int = 2048) -> np.ndarray:
    """Gaussian kernel density estimate with Scott's-rule bandwidth."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    g = np.asarray(grid, dtype=np.float64).ravel()
    h = scott_bandwidth(x)
    out = np.empty_like(g)
    norm = 1.0 / (x.size * h * np.sqrt(2 * np.pi))
    for i in range(0, g.size, chunk):
        z = (g[i:i + chunk, None] - x[None, :]) / h
        out[i:i + chunk] = np.exp(-0.5 * z * z).sum(axis=1) * norm
    return out
