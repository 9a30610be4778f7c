"""Classical denoisers with fixed default parameters, and a benchmark over noisy corpora.

All filters treat image edges by reflection and clamp their output to [0, 1].
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .acquisition import apply_poisson
from .metrics import SSIMReference, mse
from .seeds import derive_seed

PAD = "reflect"


@dataclass(frozen=True)
class Gaussian:
    size: int = 3
    sigma: float = 0.8
    name = "gaussian"

    def kernel(self) -> np.ndarray:
        r = np.arange(self.size) - (self.size - 1) / 2.0
        g = np.exp(-(r**2) / (2 * self.sigma**2))
        k = np.outer(g, g)
        return k / k.sum()

    def apply(self, img):
        return ndimage.correlate(img, self.kernel(), mode=PAD)


@dataclass(frozen=True)
class Bilateral:
    """Radiometric scale is on the 0-255 intensity scale; spatial scale is in pixels."""

    size: int = 9
    radiometric: float = 75.0
    spatial: float = 75.0
    name = "bilateral"

    def apply(self, img):
        r = self.size // 2
        inv = -1.0 / (2 * (self.radiometric / 255.0) ** 2)
        h, w = img.shape
        # pad by 2r so both ends of each offset pair can be sliced from one array
        padded = np.pad(img, 2 * r, mode="symmetric")
        num = img.copy()
        den = np.ones_like(img)
        # offset d and -d share range weights: exp(inv*(I[p+d]-I[p])^2) at p
        # equals the weight of offset -d at pixel p+d
        for dy in range(0, r + 1):
            for dx in range(-r, r + 1):
                if dy == 0 and dx <= 0:
                    continue
                ws = math.exp(-(dx * dx + dy * dy) / (2 * self.spatial**2))
                # pair weights on the grid shifted by (r, r), covering p and p+d
                base = padded[r:r + h + 2 * r, r:r + w + 2 * r]
                shifted = padded[r + dy:r + dy + h + 2 * r, r + dx:r + dx + w + 2 * r]
                wgt = ws * np.exp(inv * (shifted - base) ** 2)
                # forward: pixel p gathers I[p+d] with weight wgt[p]
                wf = wgt[r:r + h, r:r + w]
                num += wf * shifted[r:r + h, r:r + w]
                den += wf
                # backward: pixel p gathers I[p-d] with weight wgt[p-d]
                wb = wgt[r - dy:r - dy + h, r - dx:r - dx + w]
                num += wb * base[r - dy:r - dy + h, r - dx:r - dx + w]
                den += wb
        return num / den


@dataclass(frozen=True)
class Median:
    size: int = 3
    name = "median"

    def apply(self, img):
        return ndimage.median_filter(img, size=self.size, mode=PAD)


@dataclass(frozen=True)
class Wiener:
    """Local mean/variance adaptive filter; noise power is the mean local variance."""

    window: int = 3
    name = "wiener"

    def apply(self, img):
        mean = ndimage.uniform_filter(img, self.window, mode=PAD)
        var = np.maximum(ndimage.uniform_filter(img * img, self.window, mode=PAD) - mean**2, 0.0)
        noise = var.mean()
        den = np.maximum(var, noise)
        gain = np.divide(var - noise, den, out=np.ones_like(img), where=den > 0)
        return mean + np.maximum(gain, 0.0) * (img - mean)


@dataclass(frozen=True)
class WaveletBayes:
    """BayesShrink soft thresholding of an orthonormal Haar decomposition.

    levels=None picks floor(log2(min(h, w))) - 2.
    """

    levels: int | None = None
    name = "wavelet_bayes"

    def apply(self, img):
        return wavelet_bayes(img, self.levels)


@dataclass(frozen=True)
class TVChambolle:
    weight: float = 0.1
    frac_tol: float = 2.0e-4
    max_iter: int = 200
    name = "tv_chambolle"

    def apply(self, img):
        return tv_chambolle(img, self.weight, self.frac_tol, self.max_iter)[0]


DEFAULT_SPECS = (Gaussian(), Bilateral(), Median(), Wiener(), WaveletBayes(), TVChambolle())
SPECS_BY_NAME = {s.name: s for s in DEFAULT_SPECS}


def denoise(img: np.ndarray, spec) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if not np.all(np.isfinite(img)):
        raise ValueError("non-finite input")
    size = getattr(spec, "size", getattr(spec, "window", 1))
    if size % 2 == 0:
        raise ValueError("kernel sizes must be odd")
    if min(img.shape) < size:
        raise ValueError(f"image {img.shape} smaller than {size}x{size} kernel")
    return np.clip(spec.apply(img), 0.0, 1.0)


# -- Haar wavelets ---------------------------------------------------------

_S = 1.0 / math.sqrt(2.0)


def haar_forward(x: np.ndarray, levels: int):
    """Returns (approximation, [(horizontal, vertical, diagonal) finest first])."""
    details = []
    a = x
    for _ in range(levels):
        lo = (a[0::2] + a[1::2]) * _S
        hi = (a[0::2] - a[1::2]) * _S
        ll, lh = (lo[:, 0::2] + lo[:, 1::2]) * _S, (lo[:, 0::2] - lo[:, 1::2]) * _S
        hl, hh = (hi[:, 0::2] + hi[:, 1::2]) * _S, (hi[:, 0::2] - hi[:, 1::2]) * _S
        details.append((lh, hl, hh))
        a = ll
    return a, details


def haar_inverse(a: np.ndarray, details) -> np.ndarray:
    for lh, hl, hh in reversed(details):
        lo = np.empty((a.shape[0], a.shape[1] * 2))
        hi = np.empty_like(lo)
        lo[:, 0::2], lo[:, 1::2] = (a + lh) * _S, (a - lh) * _S
        hi[:, 0::2], hi[:, 1::2] = (hl + hh) * _S, (hl - hh) * _S
        a = np.empty((lo.shape[0] * 2, lo.shape[1]))
        a[0::2], a[1::2] = (lo + hi) * _S, (lo - hi) * _S
    return a


def default_levels(shape) -> int:
    return max(1, int(math.floor(math.log2(min(shape)))) - 2)


def soft_threshold(c: np.ndarray, t: float) -> np.ndarray:
    return np.sign(c) * np.maximum(np.abs(c) - t, 0.0)


def wavelet_bayes(img: np.ndarray, levels: int | None = None, sigma: float | None = None):
    """BayesShrink denoising; `sigma` overrides the MAD noise estimate."""
    h, w = img.shape
    levels = default_levels(img.shape) if levels is None else levels
    block = 2**levels
    ph, pw = -h % block, -w % block
    x = np.pad(img, ((0, ph), (0, pw)), mode="symmetric")
    approx, details = haar_forward(x, levels)
    if sigma is None:
        sigma = float(np.median(np.abs(details[0][2]))) / 0.6745
    var = sigma * sigma
    shrunk = []
    for bands in details:
        out = []
        for band in bands:
            if var == 0:
                t = 0.0
            else:
                sig_x = math.sqrt(max(float(np.mean(band * band)) - var, 0.0))
                t = var / sig_x if sig_x > 0 else float(np.abs(band).max())
            out.append(soft_threshold(band, t))
        shrunk.append(tuple(out))
    return haar_inverse(approx, shrunk)[:h, :w]


# -- total variation -------------------------------------------------------

def _grad(u):
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gx[:, :-1] = u[:, 1:] - u[:, :-1]
    gy[:-1, :] = u[1:, :] - u[:-1, :]
    return gx, gy


def _div(px, py):
    # negative adjoint of _grad
    d = np.zeros_like(px)
    d[:, 0] = px[:, 0]
    d[:, 1:-1] = px[:, 1:-1] - px[:, :-2]
    d[:, -1] = -px[:, -2]
    d[0, :] += py[0, :]
    d[1:-1, :] += py[1:-1, :] - py[:-2, :]
    d[-1, :] += -py[-2, :]
    return d


def total_variation(u: np.ndarray) -> float:
    """Isotropic TV with forward differences and zero flux at the far edges."""
    gx, gy = _grad(np.asarray(u, dtype=np.float64))
    return float(np.sqrt(gx * gx + gy * gy).sum())


def rof_energy(u, f, weight) -> float:
    return 0.5 * float(np.sum((u - f) ** 2)) + weight * total_variation(u)


def tv_chambolle(f: np.ndarray, weight: float = 0.1, frac_tol: float = 2.0e-4,
                 max_iter: int = 200, tau: float = 0.25):
    """Chambolle's dual projection for min_u 0.5*||u - f||^2 + weight*TV(u).

    Stops once the energy changes by less than frac_tol times its initial
    value, or after max_iter iterations. Returns (u, iterations).
    """
    if not weight > 0 or not frac_tol > 0:
        raise ValueError("weight and frac_tol must be positive")
    f = np.asarray(f, dtype=np.float64)
    if min(f.shape) < 2:
        return f.copy(), 0
    px = np.zeros_like(f)
    py = np.zeros_like(f)
    gx = np.zeros_like(f)
    gy = np.zeros_like(f)
    mag = np.empty_like(f)
    tmp = np.empty_like(f)
    d = np.zeros_like(f)

    def grad_into(v):
        np.subtract(v[:, 1:], v[:, :-1], out=gx[:, :-1])
        np.subtract(v[1:, :], v[:-1, :], out=gy[:-1, :])
        np.multiply(gx, gx, out=mag)
        np.multiply(gy, gy, out=tmp)
        np.add(mag, tmp, out=mag)
        np.sqrt(mag, out=mag)

    def div_into(out):
        # negative adjoint of the forward-difference gradient
        out[:, 0] = px[:, 0]
        np.subtract(px[:, 1:-1], px[:, :-2], out=out[:, 1:-1])
        out[:, -1] = -px[:, -2]
        out[0, :] += py[0, :]
        out[1:-1, :] += py[1:-1, :]
        out[1:-1, :] -= py[:-2, :]
        out[-1, :] -= py[-2, :]

    u = f.copy()
    grad_into(u)
    e_init = e_prev = weight * float(mag.sum())
    step = tau / weight
    it = 0
    while it < max_iter:
        # u = f - weight * div p, so div p - f / weight = -u / weight, whose
        # gradient is already in (gx, gy) from the previous energy evaluation
        mag *= step
        mag += 1.0
        gx *= step
        np.subtract(px, gx, out=px)
        px /= mag
        gy *= step
        np.subtract(py, gy, out=py)
        py /= mag
        div_into(d)
        np.multiply(d, -weight, out=u)
        u += f
        it += 1
        grad_into(u)
        flat = d.ravel()
        e = 0.5 * weight * weight * float(flat @ flat) + weight * float(mag.sum())
        if abs(e_prev - e) < frac_tol * e_init:
            break
        e_prev = e
    return u, it


# -- benchmark -------------------------------------------------------------

@dataclass
class BenchRow:
    method: str
    mean_mse: float
    se_mse: float
    mean_ssim: float
    se_ssim: float
    time_per_1000_s: float

    COLUMNS = ("method", "mean_mse", "se_mse", "mean_ssim", "se_ssim", "time_per_1000_s")

    def csv(self) -> str:
        vals = [getattr(self, c) for c in self.COLUMNS[1:]]
        return ",".join([self.method] + [repr(float(v)) for v in vals])


def _stats(x):
    x = np.asarray(x)
    se = x.std(ddof=1) / math.sqrt(len(x)) if len(x) > 1 else 0.0
    return float(x.mean()), float(se)


def benchmark_denoisers(corpus, dose, specs=DEFAULT_SPECS, trials: int = 200, seed: int = 0,
                        threads: int = 1) -> list[BenchRow]:
    """Mean MSE/SSIM (with standard errors) of each denoiser on Poisson-corrupted corpus images.

    Trial t corrupts image t mod len(corpus) with a seed derived from
    (seed, t). The first row is the undenoised noisy input.
    """
    if not corpus:
        raise ValueError("empty corpus")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    specs = list(specs)

    def run(t):
        clean = corpus[t % len(corpus)]
        score = SSIMReference(clean)
        noisy = np.clip(apply_poisson(clean, dose, derive_seed(seed, t)), 0.0, 1.0)
        res = [(mse(noisy, clean), score(noisy), 0.0)]
        for spec in specs:
            t0 = time.perf_counter()
            out = denoise(noisy, spec)
            dt = time.perf_counter() - t0
            res.append((mse(out, clean), score(out), dt))
        return res

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, range(trials)))
    else:
        results = [run(t) for t in range(trials)]
    arr = np.array(results)  # (trials, methods, 3)
    names = ["noisy"] + [s.name for s in specs]
    rows = []
    for j, name in enumerate(names):
        m, sm = _stats(arr[:, j, 0])
        s, ss = _stats(arr[:, j, 1])
        rows.append(BenchRow(name, m, sm, s, ss, float(arr[:, j, 2].sum() / trials * 1000)))
    return rows


def bench_csv(rows) -> str:
    return "\n".join([",".join(BenchRow.COLUMNS)] + [r.csv() for r in rows]) + "\n"
