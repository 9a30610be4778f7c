"""Sparse acquisition: mask selection, shot noise, and nearest-neighbour infill."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import special
from scipy.spatial import cKDTree

from .image import save_image
from .scan_path import BinaryMask, ScanPath, rasterize, save_mask, visit_counts

# Value held by unscanned pixels before infill. Outside [0, 1] so misuse shows up.
SENTINEL = -1.0

# Mean-count thresholds for the Poisson sampler.
_SMALL_MEAN = 10.0
_LARGE_MEAN = 1000.0


@dataclass(frozen=True)
class DoseModel:
    counts_per_pixel: float

    def __post_init__(self):
        if not self.counts_per_pixel > 0:
            raise ValueError("dose must be positive")

    @property
    def noiseless(self) -> bool:
        return math.isinf(self.counts_per_pixel)


def _as_dose(dose) -> DoseModel:
    return dose if isinstance(dose, DoseModel) else DoseModel(float(dose))


@dataclass
class PartialScan:
    values: np.ndarray
    mask: BinaryMask
    dose: DoseModel
    seed: int = 0

    def __post_init__(self):
        if self.values.shape != self.mask.shape:
            raise ValueError(f"values {self.values.shape} and mask {self.mask.shape} differ")


def poisson_counts(mean: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Poisson variates by inversion of the uniforms `u`.

    Means below 10 use sequential search of the CDF, means up to 1000 the
    exact quantile (smallest k with CDF(k) >= u), and larger means a rounded
    normal approximation.
    Fixing the algorithm (rather than relying on a library sampler) keeps
    results identical wherever the uniform stream is identical.
    """
    mean = np.asarray(mean, dtype=np.float64)
    k = np.zeros(mean.shape)

    small = (mean > 0) & (mean < _SMALL_MEAN)
    if small.any():
        lam, us = mean[small], u[small]
        p = np.exp(-lam)
        cdf = p.copy()
        ks = np.zeros_like(lam)
        for j in range(1, 200):
            more = us > cdf
            if not more.any():
                break
            ks[more] += 1
            p = p * lam / j
            cdf = cdf + p
        k[small] = ks

    mid = (mean >= _SMALL_MEAN) & (mean <= _LARGE_MEAN)
    if mid.any():
        k[mid] = _poisson_quantile(mean[mid], u[mid])

    large = mean > _LARGE_MEAN
    if large.any():
        lam = mean[large]
        k[large] = np.maximum(np.floor(lam + np.sqrt(lam) * special.ndtri(u[large]) + 0.5), 0)
    return k


def _poisson_quantile(lam, u):
    # Cornish-Fisher start, then exact correction against the CDF
    z = special.ndtri(u)
    s = np.sqrt(lam)
    k = np.maximum(np.floor(lam + s * z + (z * z - 1) / 6 + (z**3 - 7 * z) / (72 * s) + 0.5), 0)
    cdf = special.pdtr(k, lam)
    pmf = np.exp(k * np.log(lam) - lam - special.gammaln(k + 1))
    # only entries near a step boundary need the exact stepping below
    todo = np.flatnonzero((cdf < u) | ((k > 0) & (cdf - pmf >= u * (1 - 1e-12))))
    if todo.size:
        kt, lt, ut = k[todo], lam[todo], u[todo]
        while True:
            up = special.pdtr(kt, lt) < ut
            if not up.any():
                break
            kt[up] += 1
        while True:
            down = (kt > 0) & (special.pdtr(kt - 1, lt) >= ut)
            if not down.any():
                break
            kt[down] -= 1
        k[todo] = kt
    return k


def apply_poisson(img: np.ndarray, dose, seed: int = 0) -> np.ndarray:
    """Shot-noise corruption: k ~ Poisson(dose * intensity), returned as k / dose."""
    dose = _as_dose(dose)
    img = np.asarray(img, dtype=np.float64)
    if img.size and (img.min() < 0 or img.max() > 1):
        raise ValueError("intensities must lie in [0, 1]")
    if dose.noiseless:
        return img.copy()
    u = np.random.default_rng(seed).random(img.shape)
    return poisson_counts(img * dose.counts_per_pixel, u) / dose.counts_per_pixel


def sample_scan(img: np.ndarray, mask: BinaryMask, dose, seed: int = 0) -> PartialScan:
    dose = _as_dose(dose)
    if img.shape != mask.shape:
        raise ValueError(f"image {img.shape} and mask {mask.shape} differ")
    noisy = apply_poisson(img, dose, seed)
    values = np.where(mask.bits, noisy, SENTINEL)
    return PartialScan(values, mask, dose, seed)


def segment_duration_noise(scan: PartialScan, path: ScanPath, boost: float,
                           seed: int = 0) -> PartialScan:
    """Extra Gaussian noise, std boost/sqrt(dose), on pixels the path visits exactly once."""
    if boost < 0:
        raise ValueError("boost must be non-negative")
    h, w = scan.values.shape
    if not np.array_equal(rasterize(path, h, w).bits, scan.mask.bits):
        raise ValueError("path does not rasterize onto the scan mask")
    values = scan.values.copy()
    if boost == 0 or scan.dose.noiseless:
        return PartialScan(values, scan.mask, scan.dose, scan.seed)
    once = visit_counts(path, h, w) == 1
    sigma = boost / math.sqrt(scan.dose.counts_per_pixel)
    noise = np.random.default_rng(seed).normal(0.0, sigma, size=values.shape)
    values[once] = np.maximum(values[once] + noise[once], 0.0)
    return PartialScan(values, scan.mask, scan.dose, scan.seed)


def nearest_scanned(mask: BinaryMask) -> np.ndarray:
    """Flat index of the nearest scanned pixel for every pixel.

    Distance is Euclidean between pixel centres; ties go to the smaller row,
    then the smaller column.
    """
    return _nearest_scanned(mask.shape, np.packbits(mask.bits).tobytes()).copy()


@lru_cache(maxsize=8)
def _nearest_scanned(shape, packed: bytes) -> np.ndarray:
    h, w = shape
    bits = np.unpackbits(np.frombuffer(packed, np.uint8), count=h * w).astype(bool)
    src = np.flatnonzero(bits)
    if src.size == 0:
        raise ValueError("mask has no scanned pixels")
    src_rc = np.column_stack(np.divmod(src, w))
    tree = cKDTree(src_rc)
    grid = np.indices((h, w)).reshape(2, -1).T
    nearest = np.empty(h * w, dtype=np.intp)

    todo = np.arange(h * w)
    k = 8
    while todo.size:
        kk = min(k, src.size)
        _, idx = tree.query(grid[todo], k=kk)
        idx = idx.reshape(len(todo), kk)
        # exact integer squared distances; flat source index orders by (row, col)
        d2 = ((src_rc[idx] - grid[todo][:, None, :]) ** 2).sum(axis=-1)
        dmin = d2.min(axis=1, keepdims=True)
        cand = np.where(d2 == dmin, src[idx], np.iinfo(np.intp).max)
        nearest[todo] = cand.min(axis=1)
        # every returned neighbour tied: a tied source may lie beyond the k returned
        unresolved = (d2[:, -1] == dmin[:, 0]) & (kk < src.size)
        todo = todo[unresolved]
        k *= 2
    return nearest.reshape(h, w)


def infill_nearest(scan: PartialScan) -> np.ndarray:
    if scan.mask.count == 0:
        raise ValueError("cannot infill a scan with no scanned pixels")
    flat = scan.values.ravel()
    out = flat[nearest_scanned(scan.mask)]
    return np.where(scan.mask.bits, scan.values, out)


def save_partial_scan(scan: PartialScan, prefix, kind: str = "") -> None:
    """Write <prefix>_values.pgm (sentinels as 0), <prefix>_mask.pgm and <prefix>.json."""
    prefix = Path(prefix)
    values = np.where(scan.mask.bits, scan.values, 0.0)
    save_image(values, prefix.with_name(prefix.name + "_values.pgm"), bit_depth=16)
    save_mask(scan.mask, prefix.with_name(prefix.name + "_mask.pgm"))
    meta = {"dose": scan.dose.counts_per_pixel, "seed": scan.seed, "kind": kind}
    prefix.with_name(prefix.name + ".json").write_text(json.dumps(meta, indent=2) + "\n")
