"""Sparse scan paths, their rasterized masks, and coverage tuning.

Positions are (x, y) in pixel units: x is the column, y the row, and pixel
centres sit on integer coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .image import load_image, save_image

KINDS = ("spiral", "jittered_grid", "uniform_grid", "random_grid", "segment")

# Largest arc-length step along generated traces; keeps the rasterized trace 8-connected.
ARC_STEP = 0.5


class CoverageError(ValueError):
    """Requested coverage cannot be realized by the path family."""


@dataclass
class ScanPath:
    positions: np.ndarray  # (n, 2) array of (x, y)
    kind: str
    seed: int | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        if self.kind not in KINDS:
            raise ValueError(f"unknown path kind {self.kind!r}")
        if len(self.positions) == 0:
            raise ValueError("scan path has no positions")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("scan path positions must be finite")

    def __len__(self):
        return len(self.positions)

    def arc_length(self) -> float:
        return float(np.hypot(*np.diff(self.positions, axis=0).T).sum())


@dataclass
class BinaryMask:
    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 2:
            raise ValueError("mask must be 2D")

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    @property
    def coverage(self) -> float:
        return self.count / self.bits.size


@dataclass
class SegmentParams:
    T: int
    points_per_segment: int
    d: float
    start: tuple[float, float]
    headings: list[float]

    def __post_init__(self):
        if self.T < 1 or self.points_per_segment < 1 or not self.d > 0:
            raise ValueError("need T >= 1, points_per_segment >= 1 and d > 0")
        if len(self.headings) != self.T:
            raise ValueError(f"expected {self.T} headings, got {len(self.headings)}")


# -- rasterization ---------------------------------------------------------

def pixel_indices(path: ScanPath, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Nearest pixel (row, col) of every position, clamped into the image."""
    x, y = path.positions[:, 0], path.positions[:, 1]
    # round half up, not numpy's round-half-even
    cols = np.clip(np.floor(x + 0.5), 0, w - 1).astype(np.intp)
    rows = np.clip(np.floor(y + 0.5), 0, h - 1).astype(np.intp)
    return rows, cols


def rasterize(path: ScanPath, h: int, w: int) -> BinaryMask:
    if h < 1 or w < 1:
        raise ValueError("mask dimensions must be positive")
    bits = np.zeros((h, w), dtype=bool)
    bits[pixel_indices(path, h, w)] = True
    return BinaryMask(bits)


def visit_counts(path: ScanPath, h: int, w: int) -> np.ndarray:
    """Number of positions that rasterize onto each pixel."""
    rows, cols = pixel_indices(path, h, w)
    counts = np.zeros(h * w, dtype=np.int64)
    np.add.at(counts, rows * w + cols, 1)
    return counts.reshape(h, w)


# -- coverage tuning -------------------------------------------------------

@dataclass
class TuneResult:
    param: float
    coverage: float
    iterations: int
    converged: bool


def tune_coverage(evaluate, target: float, tol: float = 0.02, bracket=(0.0, 1.0),
                  integer: bool = False, max_iter: int = 64) -> TuneResult:
    """Bisect a generator parameter until coverage is within `tol` (relative) of target.

    `evaluate(param)` returns the achieved coverage. Coverage must be monotone
    (in either direction) over `bracket`; ends that do not straddle the target
    raise CoverageError unless one of them is already within tolerance. The best parameter seen is returned even when the
    tolerance is not met, with `converged=False`.
    """
    lo, hi = bracket
    if integer:
        lo, hi = int(lo), int(hi)
    c_lo, c_hi = evaluate(lo), evaluate(hi)

    def err(c):
        return abs(c - target) / target

    if not min(c_lo, c_hi) <= target <= max(c_lo, c_hi):
        near = min((lo, c_lo), (hi, c_hi), key=lambda pc: err(pc[1]))
        if err(near[1]) <= tol:
            return TuneResult(near[0], near[1], 0, True)
        raise CoverageError(
            f"target coverage {target:.6g} outside bracket coverages [{min(c_lo, c_hi):.6g}, {max(c_lo, c_hi):.6g}]")
    increasing = c_hi >= c_lo
    best = min((lo, c_lo), (hi, c_hi), key=lambda pc: err(pc[1]))
    it = 0
    while it < max_iter and err(best[1]) > tol:
        if integer:
            if abs(hi - lo) <= 1:
                break
            mid = (lo + hi) // 2
        else:
            if abs(hi - lo) <= 1e-12 * max(abs(lo), abs(hi)):
                break
            mid = 0.5 * (lo + hi)
        c = evaluate(mid)
        it += 1
        if err(c) < err(best[1]):
            best = (mid, c)
        if (c < target) == increasing:
            lo = mid
        else:
            hi = mid
    return TuneResult(best[0], best[1], it, err(best[1]) <= tol)


def _require(res: TuneResult, target: float, tol: float, what: str):
    if abs(res.coverage - target) / target > tol:
        raise CoverageError(f"{what}: best coverage {res.coverage:.6g} misses target "
                            f"{target:.6g} by more than {tol:.0%}")


# -- generators ------------------------------------------------------------

def _spiral_arc(theta, a):
    return 0.5 * a * (theta * np.sqrt(1.0 + theta**2) + np.arcsinh(theta))


def spiral_positions(h: int, w: int, pitch: float) -> np.ndarray:
    """In-image samples of r = pitch * theta about the image centre, at ARC_STEP spacing.

    The spiral runs out to the corner radius; samples that fall outside the
    image are dropped.
    """
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    r_max = math.hypot(cx, cy) + 0.5
    total = float(_spiral_arc(r_max / pitch, pitch))
    n = int(math.ceil(total / ARC_STEP)) + 1
    s = np.linspace(0.0, total, n)
    # S(theta) >= pitch*theta^2/2, so this start overestimates and Newton descends monotonically
    theta = np.sqrt(2.0 * s / pitch)
    for _ in range(50):
        step = (_spiral_arc(theta, pitch) - s) / (pitch * np.sqrt(1.0 + theta**2))
        theta -= step
        if np.max(np.abs(step)) < 1e-12:
            break
    r = pitch * theta
    x = cx + r * np.cos(theta)
    y = cy + r * np.sin(theta)
    keep = (x >= -0.5) & (x < w - 0.5) & (y >= -0.5) & (y < h - 0.5)
    return np.column_stack([x[keep], y[keep]])


def spiral_pitch_bracket(h: int, w: int) -> tuple[float, float]:
    """Pitch range from one-pixel turn spacing to a single-turn spiral."""
    r_max = math.hypot((w - 1) / 2.0, (h - 1) / 2.0) + 0.5
    return 1.0 / (2 * math.pi), r_max / (2 * math.pi)


def archimedes_spiral(h: int, w: int, target_coverage: float, tol: float = 0.02) -> ScanPath:
    if not 0 < target_coverage <= 1:
        raise ValueError("target coverage must be in (0, 1]")
    if h < 16 or w < 16:
        raise ValueError("spiral paths need images of at least 16x16")

    def evaluate(pitch):
        return rasterize(ScanPath(spiral_positions(h, w, pitch), "spiral"), h, w).coverage

    # aim well inside the tolerance so rasterization jitter cannot push callers over it
    res = tune_coverage(evaluate, target_coverage, tol / 4, spiral_pitch_bracket(h, w))
    _require(res, target_coverage, tol, "spiral")
    return ScanPath(spiral_positions(h, w, res.param), "spiral",
                    params={"pitch": res.param, "coverage": res.coverage})


def jittered_rows(h: int, w: int, n_rows: int, knot_spacing: float, jitter: float = 0.4,
                  seed: int = 0) -> np.ndarray:
    """Horizontal rows whose heights wander between randomly jittered knots.

    Row k is centred in its band of height h/n_rows. Knots sit every
    `knot_spacing` columns (plus one at the right edge), each displaced by a
    uniform offset in +-jitter * row spacing, and are joined by straight
    lines sampled at ARC_STEP.
    """
    rng = np.random.default_rng(seed)
    spacing = h / n_rows
    knots_x = np.arange(0.0, w - 1, knot_spacing)
    knots_x = np.append(knots_x, float(w - 1))
    out = []
    for k in range(n_rows):
        offsets = rng.uniform(-jitter, jitter, size=len(knots_x)) * spacing
        ky = (k + 0.5) * spacing - 0.5 + offsets
        seg_len = np.hypot(np.diff(knots_x), np.diff(ky))
        for i, length in enumerate(seg_len):
            n = max(1, int(math.ceil(length / ARC_STEP)))
            t = np.arange(n) / n
            out.append(np.column_stack([knots_x[i] + t * (knots_x[i + 1] - knots_x[i]),
                                        ky[i] + t * (ky[i + 1] - ky[i])]))
        out.append([[knots_x[-1], ky[-1]]])
    return np.concatenate(out)


def jittered_grid_path(h: int, w: int, target_coverage: float, seed: int = 0,
                       jitter: float = 0.4, tol: float = 0.02) -> ScanPath:
    """Gridlike raster rows with bounded vertical jitter, tuned to a target coverage.

    The row count is the most rows whose straight-line coverage stays at or
    below the target; the knot spacing then sets how much extra length the
    jitter adds. With zero jitter the rows are straight and only the row
    count is adjustable.
    """
    if not 0 < target_coverage <= 1:
        raise ValueError("target coverage must be in (0, 1]")
    if h < 16 or w < 16:
        raise ValueError("grid paths need images of at least 16x16")
    if not 0 <= jitter < 0.5:
        raise ValueError("jitter must be in [0, 0.5) of the row spacing")

    def mask_for(n_rows, knot):
        return rasterize(ScanPath(jittered_rows(h, w, n_rows, knot, jitter, seed),
                                  "jittered_grid"), h, w)

    if jitter == 0:
        n_rows = max(1, int(round(target_coverage * h)))
        knot = float(w)
        cov = mask_for(n_rows, knot).coverage
        if abs(cov - target_coverage) / target_coverage > tol:
            raise CoverageError(f"straight rows reach {cov:.6g}, not {target_coverage:.6g}")
    else:
        n_rows = max(1, int(math.floor(target_coverage * h)))
        res = tune_coverage(lambda kn: mask_for(n_rows, kn).coverage, target_coverage, tol / 4,
                            bracket=(float(w), 1.0))
        _require(res, target_coverage, tol, "jittered grid")
        knot, cov = res.param, res.coverage
    return ScanPath(jittered_rows(h, w, n_rows, knot, jitter, seed), "jittered_grid", seed,
                    params={"n_rows": n_rows, "knot_spacing": knot, "jitter": jitter,
                            "coverage": cov})


def uniform_grid_mask(h: int, w: int, stride: int) -> BinaryMask:
    if not 1 <= stride <= min(h, w):
        raise ValueError(f"stride must be in [1, {min(h, w)}]")
    bits = np.zeros((h, w), dtype=bool)
    bits[::stride, ::stride] = True
    return BinaryMask(bits)


def random_grid_mask(h: int, w: int, target_coverage: float, seed: int = 0) -> BinaryMask:
    """Exactly round(target * h * w) distinct pixels drawn uniformly without replacement."""
    if not 0 < target_coverage <= 1:
        raise ValueError("target coverage must be in (0, 1]")
    count = max(1, int(math.floor(target_coverage * h * w + 0.5)))
    rng = np.random.default_rng(seed)
    bits = np.zeros(h * w, dtype=bool)
    bits[rng.choice(h * w, size=count, replace=False)] = True
    return BinaryMask(bits.reshape(h, w))


def segment_path(params: SegmentParams) -> ScanPath:
    """Piecewise-straight path; each segment starts on the previous segment's last point."""
    n = params.points_per_segment
    steps = np.arange(n) * params.d
    pos = np.empty((params.T * n, 2))
    x0, y0 = params.start
    for t, heading in enumerate(params.headings):
        pos[t * n:(t + 1) * n, 0] = x0 + steps * math.cos(heading)
        pos[t * n:(t + 1) * n, 1] = y0 + steps * math.sin(heading)
        x0, y0 = pos[(t + 1) * n - 1]
    return ScanPath(pos, "segment", params={"T": params.T, "d": params.d})


# -- serialization ---------------------------------------------------------

def save_path_csv(path: ScanPath, file) -> None:
    seed = "none" if path.seed is None else path.seed
    lines = [f"# kind={path.kind} seed={seed}"]
    lines += [f"{x!r},{y!r}" for x, y in path.positions.tolist()]
    Path(file).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_path_csv(file) -> ScanPath:
    text = Path(file).read_text(encoding="utf-8").splitlines()
    meta = dict(tok.split("=", 1) for tok in text[0].lstrip("# ").split())
    pos = np.array([[float(v) for v in line.split(",")] for line in text[1:] if line])
    seed = None if meta.get("seed", "none") == "none" else int(meta["seed"])
    return ScanPath(pos, meta["kind"], seed)


def save_mask(mask: BinaryMask, file) -> None:
    save_image(mask.bits.astype(np.float64), file, bit_depth=8)


def load_mask(file) -> BinaryMask:
    return BinaryMask(load_image(file) > 0.5)
