"""Adaptive learning rate clipping (ALRC), Huberized losses, and a small training harness.

ALRC rescales each loss whose value lies more than n_up running standard
deviations above (or n_down below) its running mean so that it sits on the
bound. The rescaling factor is treated as a constant under differentiation,
so the gradient step shrinks by the same factor while the raw loss, not the
clipped one, feeds the running statistics.

The harness fits y = w*x + b by minimizing |error|^p on data with
Student-t(3) noise. Gradients are analytic and parameters are plain floats,
which keeps runs bit-reproducible and fast at batch size 1.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .seeds import derive_seed

INF = math.inf


@dataclass
class LossRecord:
    raw: float
    transformed: float
    multiplier: float = 1.0
    clipped_above: bool = False
    clipped_below: bool = False


@dataclass
class AlrcState:
    """Running loss moments and clipping thresholds.

    The first `warmup_min` losses initialize mu1/mu2 as plain sample moments
    and pass through unclipped; afterwards the moments are exponential moving
    averages with factor `decay`. Infinite n_up / n_down disable that side.
    """

    n_up: float = 3.0
    n_down: float = INF
    decay: float = 0.999
    warmup_min: int = 10
    mu1: float = 0.0
    mu2: float = 0.0
    warmup_count: int = 0

    def __post_init__(self):
        if not (self.n_up > 0 and self.n_down > 0):
            raise ValueError("n_up and n_down must be positive (or inf)")
        if not 0 < self.decay < 1:
            raise ValueError("decay must be in (0, 1)")

    @property
    def sigma(self) -> float:
        return math.sqrt(max(self.mu2 - self.mu1 * self.mu1, 0.0))

    @property
    def warm(self) -> bool:
        return self.warmup_count >= self.warmup_min

    def bounds(self) -> tuple[float, float]:
        s = self.sigma
        upper = INF if self.n_up == INF else self.mu1 + self.n_up * s
        lower = -INF if self.n_down == INF else self.mu1 - self.n_down * s
        return lower, upper

    def update(self, loss: float) -> LossRecord:
        """Transform one raw loss and fold it into the statistics, in place."""
        if not (loss >= 0 and math.isfinite(loss)):
            raise ValueError(f"loss must be finite and non-negative, got {loss!r}")
        rec = LossRecord(loss, loss)
        if self.warm:
            lower, upper = self.bounds()
            if loss > upper:
                rec.multiplier = upper / loss
                rec.transformed = upper
                rec.clipped_above = True
            elif loss < lower and lower > 0 and loss > 0:
                rec.multiplier = lower / loss
                rec.transformed = lower
                rec.clipped_below = True
        self.warmup_count += 1
        if self.warmup_count <= self.warmup_min:
            k = self.warmup_count
            self.mu1 += (loss - self.mu1) / k
            self.mu2 += (loss * loss - self.mu2) / k
        else:
            d = self.decay
            self.mu1 = d * self.mu1 + (1 - d) * loss
            self.mu2 = d * self.mu2 + (1 - d) * loss * loss
        return rec


def alrc_transform(state: AlrcState, loss: float) -> tuple[LossRecord, AlrcState]:
    """Pure form of AlrcState.update: returns the record and a new state."""
    new = copy.copy(state)
    return new.update(loss), new


def huber_transform(loss: float, lam: float) -> float:
    """min(L, sqrt(lam * L))."""
    if loss < 0:
        raise ValueError("loss must be non-negative")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return min(loss, math.sqrt(lam * loss))


def huber_slope(loss: float, lam: float) -> float:
    """d Huber / dL, the factor the gradient is scaled by."""
    return 1.0 if loss <= lam else 0.5 * math.sqrt(lam / loss)


# -- optimizers ------------------------------------------------------------

@dataclass(frozen=True)
class SGD:
    lr: float
    momentum: float = 0.9
    nesterov: bool = False
    name = "sgd"

    def __post_init__(self):
        if not self.lr > 0 or not 0 <= self.momentum < 1:
            raise ValueError("need lr > 0 and momentum in [0, 1)")

    def init(self, n):
        return [[0.0] * n]

    def step(self, params, grads, slots, t):
        (v,) = slots
        mu, lr = self.momentum, self.lr
        for i, g in enumerate(grads):
            v[i] = mu * v[i] + g
            params[i] -= lr * (g + mu * v[i] if self.nesterov else v[i])


@dataclass(frozen=True)
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    name = "adam"

    def __post_init__(self):
        if not self.lr > 0 or not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("need lr > 0 and betas in [0, 1)")

    def init(self, n):
        return [[0.0] * n, [0.0] * n]

    def step(self, params, grads, slots, t):
        m, v = slots
        c1 = 1 - self.beta1 ** t
        c2 = 1 - self.beta2 ** t
        for i, g in enumerate(grads):
            m[i] = self.beta1 * m[i] + (1 - self.beta1) * g
            v[i] = self.beta2 * v[i] + (1 - self.beta2) * g * g
            params[i] -= self.lr * (m[i] / c1) / (math.sqrt(v[i] / c2) + self.eps)


# -- clipping choices ------------------------------------------------------

@dataclass(frozen=True)
class NoClip:
    name = "none"


@dataclass(frozen=True)
class Alrc:
    n_up: float = 3.0
    n_down: float = INF
    decay: float = 0.999
    warmup_min: int = 10
    name = "alrc"

    def state(self) -> AlrcState:
        return AlrcState(self.n_up, self.n_down, self.decay, self.warmup_min)


@dataclass(frozen=True)
class Huber:
    lam: float = 1.0
    name = "huber"


# -- synthetic task --------------------------------------------------------

@dataclass(frozen=True)
class RegressionProblem:
    """y = w*x + b + scale*t(dof), x ~ N(0, 1); per-example loss |error|^p."""

    p: int = 2
    n_examples: int = 10_000
    w_true: float = 0.5
    b_true: float = 0.1
    noise_scale: float = 0.1
    dof: float = 3.0
    data_seed: int = 0

    def data(self) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng(self.data_seed)
        x = rng.normal(size=self.n_examples)
        y = self.w_true * x + self.b_true + self.noise_scale * rng.standard_t(self.dof, self.n_examples)
        return x, y

    def floor(self) -> tuple[float, np.ndarray]:
        """Minimum mean loss over the dataset and its minimizer (w, b)."""
        x, y = self.data()
        A = np.column_stack([x, np.ones_like(x)])
        theta, *_ = np.linalg.lstsq(A, y, rcond=None)
        if self.p != 2:
            res = optimize.minimize(lambda th: np.mean(np.abs(A @ th - y) ** self.p), theta,
                                    method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14})
            theta = res.x
        return float(np.mean(np.abs(A @ theta - y) ** self.p)), theta


@dataclass
class TrainingResult:
    raw_loss: np.ndarray
    transformed_loss: np.ndarray
    multiplier: np.ndarray
    params: tuple[float, float]
    steps: int
    diverged: bool = False
    first_nonfinite: int | None = None
    config: dict = field(default_factory=dict)

    def final_mean(self, last: int = 5000) -> float:
        """Mean raw loss over the last `last` steps; inf for a diverged run."""
        if self.diverged:
            return INF
        return float(np.mean(self.raw_loss[-last:]))

    def curve(self, window: int = 500, stride: int = 100) -> np.ndarray:
        """Rows of (step, raw, transformed, multiplier), boxcar averaged over `window` steps.

        A row at step s averages steps s-window+1 .. s.
        """
        cols = np.column_stack([self.raw_loss, self.transformed_loss, self.multiplier])
        n = len(cols)
        window = min(window, n)
        if window < 1:
            return np.empty((0, 4))
        c = np.cumsum(np.vstack([np.zeros((1, 3)), cols]), axis=0)
        ends = np.arange(window, n + 1, stride)
        avg = (c[ends] - c[ends - window]) / window
        return np.column_stack([ends, avg])

    def curve_csv(self, window: int = 500, stride: int = 100) -> str:
        rows = ["step,raw_loss,transformed_loss,multiplier"]
        rows += [f"{int(s)},{r!r},{t!r},{m!r}" for s, r, t, m in self.curve(window, stride).tolist()]
        return "\n".join(rows) + "\n"


def boxcar(x, window: int = 500) -> np.ndarray:
    """Trailing moving average over complete windows."""
    x = np.asarray(x, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(x)])
    return (c[window:] - c[:-window]) / window


def run_synthetic_training(problem: RegressionProblem, opt, clip=NoClip(), steps: int = 20_000,
                           batch: int = 1, seed: int = 0) -> TrainingResult:
    """Minibatch training of (w, b) from zero, with the loss transform applied per batch.

    The transform acts on the batch-mean loss and scales the gradient step:
    by the ALRC multiplier, or by the Huber slope. Divergence (a non-finite
    loss or parameter) stops the run and is flagged rather than raised.
    """
    if steps < 1 or batch < 1:
        raise ValueError("steps and batch must be >= 1")
    p = int(problem.p)
    if p < 1 or p != problem.p:
        raise ValueError("p must be a positive integer")
    X, Y = problem.data()
    idx = np.random.default_rng(seed).integers(0, len(X), size=steps * batch)
    xs, ys = X[idx].tolist(), Y[idx].tolist()

    raw = np.empty(steps)
    transformed = np.empty(steps)
    mult = np.empty(steps)
    params = [0.0, 0.0]
    slots = opt.init(2)
    state = clip.state() if isinstance(clip, Alrc) else None
    lam = clip.lam if isinstance(clip, Huber) else None
    inv_b = 1.0 / batch
    diverged_at = None

    for t in range(steps):
        w, b = params
        loss = gw = gb = 0.0
        for j in range(t * batch, (t + 1) * batch):
            x = xs[j]
            e = w * x + b - ys[j]
            ae = abs(e)
            try:
                a_pm1 = ae ** (p - 1)
            except OverflowError:
                a_pm1 = INF
            loss += a_pm1 * ae
            g = p * a_pm1 if e > 0 else -p * a_pm1
            gw += g * x
            gb += g
        loss *= inv_b
        gw *= inv_b
        gb *= inv_b
        if not (math.isfinite(loss) and math.isfinite(gw) and math.isfinite(gb)):
            diverged_at = t
            break

        if state is not None:
            rec = state.update(loss)
            m, tl = rec.multiplier, rec.transformed
            if m != 1.0:
                gw *= m
                gb *= m
        elif lam is not None:
            tl = huber_transform(loss, lam)
            m = tl / loss if loss > 0 else 1.0
            s = huber_slope(loss, lam)
            gw *= s
            gb *= s
        else:
            m, tl = 1.0, loss
        raw[t], transformed[t], mult[t] = loss, tl, m

        opt.step(params, (gw, gb), slots, t + 1)
        if not (math.isfinite(params[0]) and math.isfinite(params[1])):
            diverged_at = t + 1
            break

    n = steps if diverged_at is None else diverged_at
    return TrainingResult(raw[:n].copy(), transformed[:n].copy(), mult[:n].copy(),
                          (params[0], params[1]), n, diverged_at is not None, diverged_at,
                          {"p": p, "batch": batch, "steps": steps, "seed": seed,
                           "optimizer": repr(opt), "clip": repr(clip)})


# -- experiment grid -------------------------------------------------------

@dataclass
class GridCell:
    n: float | None  # None: no clipping
    batch: int
    finals: list[float]
    diverged: int
    curves: list = field(default_factory=list)  # per repeat, from TrainingResult.curve

    @property
    def label(self) -> str:
        return "none" if self.n is None else ("inf" if self.n == INF else f"{self.n:g}")

    # a cell with any diverged run reports infinite mean and spread
    @property
    def mean(self) -> float:
        return INF if self.diverged else float(np.mean(self.finals))

    @property
    def std(self) -> float:
        return INF if self.diverged else float(np.std(self.finals))


def clip_for(n) -> object:
    return NoClip() if n is None else Alrc(n_up=n)


def alrc_grid(problem: RegressionProblem, opt, ns=(2.0, 3.0, 4.0, INF), batches=(1, 4, 16, 64),
              repeats: int = 10, steps: int = 20_000, last: int = 5000, seed: int = 0,
              runner=None, curve_window: int | None = None) -> list[GridCell]:
    """Final-loss statistics over clip thresholds x batch sizes x repeats.

    Repeat r of every cell uses the same minibatch seed, so cells differ only
    in their clipping. `runner` may be a map-like callable for parallel runs.
    With `curve_window`, each cell also keeps boxcar-averaged learning curves.
    """
    jobs = [(n, bs, r) for n in ns for bs in batches for r in range(repeats)]

    def one(job):
        n, bs, r = job
        res = run_synthetic_training(problem, opt, clip_for(n), steps, bs, derive_seed(seed, r))
        curve = res.curve(curve_window, max(1, curve_window // 5)) if curve_window else None
        return res.final_mean(last), res.diverged, curve

    results = list((runner or map)(one, jobs))
    cells = []
    for n in ns:
        for bs in batches:
            out = [res for job, res in zip(jobs, results) if job[0] == n and job[1] == bs]
            cells.append(GridCell(n, bs, [f for f, _, _ in out], sum(d for _, d, _ in out),
                                  [c for _, _, c in out] if curve_window else []))
    return cells


def _fmt(n):
    return "none" if n is None else ("inf" if n == INF else f"{n:g}")


def grid_csv(cells, scale: float = 100.0) -> str:
    """Wide table: one row per batch size, mean and std (x scale) per clipping threshold."""
    ns = list(dict.fromkeys(c.n for c in cells))
    batches = list(dict.fromkeys(c.batch for c in cells))
    by = {(c.n, c.batch): c for c in cells}
    head = ["batch"] + [f"{k}_n{_fmt(n)}" for n in ns for k in ("mean", "std", "diverged")]
    rows = [",".join(head)]
    for bs in batches:
        vals = [str(bs)]
        for n in ns:
            c = by[(n, bs)]
            vals += [repr(c.mean * scale), repr(c.std * scale), str(c.diverged)]
        rows.append(",".join(vals))
    return "\n".join(rows) + "\n"
