"""Non-learned completion of partial scans, and coverage/error sweeps."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .acquisition import PartialScan, infill_nearest, sample_scan
from .metrics import ErrorMap, masked_rmse
from .seeds import derive_seed


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Nearest:
    name = "nearest"


@dataclass(frozen=True)
class IDW:
    power: float = 2.0
    k: int = 8
    name = "idw"

    def __post_init__(self):
        if not self.power > 0 or self.k < 1:
            raise ValueError("idw needs power > 0 and k >= 1")


@dataclass(frozen=True)
class Diffusion:
    """Laplace relaxation with scanned pixels held fixed and zero flux at image edges."""

    iterations: int = 10_000
    tol: float = 1e-6
    name = "diffusion"

    def __post_init__(self):
        if self.iterations < 1 or not self.tol > 0:
            raise ValueError("diffusion needs iterations >= 1 and tol > 0")


METHODS = {"nearest": Nearest, "idw": IDW, "diffusion": Diffusion}


def parse_method(text: str):
    """'idw', 'idw:power=3,k=4', 'diffusion:tol=1e-8' -> method object."""
    name, _, args = text.partition(":")
    if name not in METHODS:
        raise ValueError(f"unknown completion method {name!r}")
    kwargs = {}
    for item in filter(None, args.split(",")):
        key, val = item.split("=")
        kwargs[key] = int(val) if key in ("k", "iterations") else float(val)
    return METHODS[name](**kwargs)


@lru_cache(maxsize=8)
def _neighbours(shape, packed: bytes, k: int):
    # k nearest scanned pixels of every unscanned pixel; sweeps reuse one mask
    bits = np.unpackbits(np.frombuffer(packed, np.uint8), count=shape[0] * shape[1])
    bits = bits.reshape(shape).astype(bool)
    holes = np.argwhere(~bits)
    dist, idx = cKDTree(np.argwhere(bits)).query(holes, k=k)
    dist, idx = dist.reshape(len(holes), k), idx.reshape(len(holes), k)
    dist.flags.writeable = idx.flags.writeable = False
    return dist, idx


def _idw(scan: PartialScan, method: IDW) -> np.ndarray:
    bits = scan.mask.bits
    src_val = scan.values[bits]
    k = min(method.k, len(src_val))
    out = scan.values.copy()
    if scan.mask.count == bits.size:
        return out
    dist, idx = _neighbours(bits.shape, np.packbits(bits).tobytes(), k)
    wgt = dist ** (-method.power)
    out[~bits] = (wgt * src_val[idx]).sum(axis=1) / wgt.sum(axis=1)
    return out


def relaxation_factor(mask_bits: np.ndarray) -> float:
    """Over-relaxation factor for a Laplace problem on the holes of a mask.

    Uses the optimal SOR factor of a square of side twice the largest
    distance to a scanned pixel.
    """
    d = ndimage.distance_transform_edt(~mask_bits).max()
    side = max(2.0 * d, 1.0)
    return 2.0 / (1.0 + math.sin(math.pi / (side + 1.0)))


def _diffusion(scan: PartialScan, method: Diffusion) -> tuple[np.ndarray, int, float]:
    # red-black successive over-relaxation of the 5-point Laplacian; clamping
    # neighbour indices at the image edge replicates the border (zero flux)
    bits = scan.mask.bits
    h, w = bits.shape
    omega = relaxation_factor(bits)
    u = infill_nearest(scan).ravel()
    colours = []
    for c in (0, 1):
        rows, cols = np.nonzero(~bits & ((np.add.outer(np.arange(h), np.arange(w)) % 2) == c))
        if rows.size:
            nbrs = [np.minimum(rows + 1, h - 1) * w + cols, np.maximum(rows - 1, 0) * w + cols,
                    rows * w + np.minimum(cols + 1, w - 1), rows * w + np.maximum(cols - 1, 0)]
            colours.append((rows * w + cols, nbrs))
    change = math.inf
    it = 0
    while it < method.iterations:
        change = 0.0
        for idx, (n0, n1, n2, n3) in colours:
            delta = omega * (0.25 * (u[n0] + u[n1] + u[n2] + u[n3]) - u[idx])
            u[idx] += delta
            change = max(change, float(np.abs(delta).max()))
        it += 1
        if change < method.tol:
            break
    return u.reshape(h, w), it, change


def complete(scan: PartialScan, method=IDW()) -> np.ndarray:
    """Fill unscanned pixels; scanned pixels are returned bit-identical."""
    if scan.mask.count == 0:
        raise ValueError("cannot complete a scan with no scanned pixels")
    if isinstance(method, Nearest):
        out = infill_nearest(scan)
    elif isinstance(method, IDW):
        out = _idw(scan, method)
    elif isinstance(method, Diffusion):
        out, it, change = _diffusion(scan, method)
        if change >= method.tol:
            warnings.warn(f"diffusion stopped at {it} iterations with max update {change:.3g}",
                          ConvergenceWarning, stacklevel=2)
    else:
        raise TypeError(f"unknown completion method {method!r}")
    return np.where(scan.mask.bits, scan.values, out)


# -- sweeps ----------------------------------------------------------------

REGIONS = ("all", "scanned", "unscanned")


def region_rmse(out, clean, mask, region: str = "all") -> float:
    if region == "all":
        return float(np.sqrt(np.mean((out - clean) ** 2)))
    if region not in REGIONS:
        raise ValueError(f"unknown region {region!r}")
    return masked_rmse(out, clean, mask, over_unscanned=(region == "unscanned"))


@dataclass
class SweepRow:
    coverage: float
    method: str
    mean_rmse: float
    std_rmse: float
    n_images: int
    rmses: np.ndarray = None
    error_map: ErrorMap = None

    COLUMNS = ("coverage", "method", "mean_rmse", "std_rmse", "n_images")

    def csv(self) -> str:
        return f"{self.coverage!r},{self.method},{self.mean_rmse!r},{self.std_rmse!r},{self.n_images}"


def coverage_sweep(corpus, path_family, coverages, method=IDW(), dose=300.0, seed: int = 0,
                   region: str = "all", error_kind: str = "squared",
                   threads: int = 1) -> list[SweepRow]:
    """Mean/std of per-image completion RMSE at each coverage.

    `path_family(h, w, coverage, seed)` returns a BinaryMask. Image i at
    coverage index j is sampled with a seed derived from (seed, j, i), so
    results do not depend on the thread count.
    """
    if not corpus:
        raise ValueError("empty corpus")
    if list(coverages) != sorted(coverages):
        raise ValueError("coverages must be sorted ascending")
    rows = []
    for j, cov in enumerate(coverages):
        masks = {}

        def mask_for(shape):
            if shape not in masks:
                masks[shape] = path_family(shape[0], shape[1], cov, seed)
            return masks[shape]

        for img in corpus:
            mask_for(img.shape)

        def run(i):
            clean = corpus[i]
            mask = masks[clean.shape]
            scan = sample_scan(clean, mask, dose, derive_seed(seed, j, i))
            out = complete(scan, method)
            return out, region_rmse(out, clean, mask, region)

        idx = range(len(corpus))
        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                results = list(pool.map(run, idx))
        else:
            results = [run(i) for i in idx]
        rmses = np.array([r for _, r in results])
        emap = None
        if len({img.shape for img in corpus}) == 1:
            emap = ErrorMap(*corpus[0].shape)
            for (out, _), clean in zip(results, corpus):
                emap.accumulate(out, clean, error_kind)
        rows.append(SweepRow(float(cov), method.name, float(rmses.mean()), float(rmses.std()),
                             len(corpus), rmses, emap))
    return rows


def sweep_csv(rows) -> str:
    return "\n".join([",".join(SweepRow.COLUMNS)] + [r.csv() for r in rows]) + "\n"
