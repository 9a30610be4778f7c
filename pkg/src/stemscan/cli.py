"""Command-line front end: scan paths, coverage sweeps, denoiser benchmarks and ALRC grids.

Every run writes its outputs plus a manifest.json holding the fully resolved
configuration, so `stemscan replay <manifest>` regenerates the same files.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .alrc import INF, SGD, Adam, RegressionProblem, alrc_grid, grid_csv
from .completion import REGIONS, coverage_sweep, parse_method, sweep_csv
from .denoise import SPECS_BY_NAME, bench_csv, benchmark_denoisers
from .image import load_image, save_image
from .metrics import histogram, save_error_map
from .scan_path import (CoverageError, archimedes_spiral, jittered_grid_path, random_grid_mask,
                        rasterize, save_mask, save_path_csv, uniform_grid_mask)
from .synthetic import synthetic_corpus

PATH_KINDS = ("spiral", "jittered_grid", "uniform_grid", "random_grid")
KIND_ALIASES = {"jittered": "jittered_grid", "uniform": "uniform_grid", "random": "random_grid"}
IMAGE_SUFFIXES = (".pgm", ".png")


class RunError(Exception):
    """A run that could not produce any of its outputs."""


# -- value parsing ---------------------------------------------------------

def parse_coverage(text: str) -> float:
    """'0.05' or '1/20' (either side may be decimal, e.g. '1/17.9')."""
    num, sep, den = text.strip().partition("/")
    try:
        value = float(num) / float(den) if sep else float(num)
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"bad coverage {text!r}") from None
    if not 0 < value <= 1:
        raise ValueError(f"coverage {text!r} outside (0, 1]")
    return value


def coverage_label(text: str) -> str:
    return text.strip().replace("/", "_")


def parse_n(text: str):
    t = text.strip().lower()
    if t == "none":
        return None
    if t in ("inf", "infinity"):
        return INF
    return float(t)


def parse_kind(text: str) -> str:
    kind = KIND_ALIASES.get(text, text)
    if kind not in PATH_KINDS:
        raise argparse.ArgumentTypeError(f"unknown path kind {text!r}; choose from {PATH_KINDS}")
    return kind


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _method_list(text: str) -> list[str]:
    # "idw:power=1.5,k=12,nearest" -> ["idw:power=1.5,k=12", "nearest"]
    out = []
    for tok in _csv_list(text):
        if "=" in tok and ":" not in tok and out:
            out[-1] += "," + tok
        else:
            out.append(tok)
    return out


def default_threads() -> int:
    env = os.environ.get("STEMSCAN_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def read_config(path) -> list[str]:
    """`key = value` lines as flag arguments; '#' starts a comment."""
    argv = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        flag = "--" + key.strip().replace("_", "-")
        value = value.strip().strip('"').strip("'")
        if value.lower() in ("true", "false"):
            if value.lower() == "true":
                argv.append(flag)
        else:
            argv += [flag, value]
    return argv


# -- corpus ----------------------------------------------------------------

def load_corpus(cfg) -> tuple[list[np.ndarray], dict]:
    if cfg["corpus"]:
        root = Path(cfg["corpus"])
        files = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES) \
            if root.is_dir() else []
        if not files:
            raise RunError(f"no .pgm/.png images in corpus directory {root}")
        digest = hashlib.sha256()
        for f in files:
            digest.update(f.name.encode() + b"\0" + f.read_bytes())
        return [load_image(f) for f in files], {"files": len(files), "sha256": digest.hexdigest()}
    if cfg["synthetic"] < 1:
        raise RunError("empty corpus: give --corpus DIR or --synthetic N")
    size = cfg["size"]
    return synthetic_corpus(cfg["synthetic"], size, size, cfg["corpus_seed"]), {}


def mask_family(kind: str, jitter: float = 0.4):
    """(h, w, coverage, seed) -> BinaryMask for a path kind."""
    def family(h, w, cov, seed):
        if kind == "spiral":
            return rasterize(archimedes_spiral(h, w, cov), h, w)
        if kind == "jittered_grid":
            return rasterize(jittered_grid_path(h, w, cov, seed, jitter), h, w)
        if kind == "uniform_grid":
            return uniform_grid_mask(h, w, max(1, round(1 / math.sqrt(cov))))
        if kind == "random_grid":
            return random_grid_mask(h, w, cov, seed)
        raise ValueError(f"unknown path kind {kind!r}")
    return family


def _pool_map(threads):
    if threads > 1:
        pool = ThreadPoolExecutor(threads)
        return pool, pool.map
    return None, map


# -- commands --------------------------------------------------------------
# Each command takes the resolved config dict and an output directory, and
# returns (files written, failed items, extra manifest fields).

def cmd_paths(cfg, out: Path):
    size, kind = cfg["size"], cfg["kind"]
    written, failed = [], []
    rows = ["kind,target,label,achieved,relative_error,count"]
    if kind == "uniform_grid":
        stride = cfg["stride"]
        mask = uniform_grid_mask(size, size, stride)
        name = f"mask_uniform_grid_s{stride}.pgm"
        save_mask(mask, out / name)
        written.append(name)
        target = 1.0 / stride**2
        rows.append(f"uniform_grid,{target!r},s{stride},{mask.coverage!r},"
                    f"{(mask.coverage - target) / target!r},{mask.count}")
    else:
        if not cfg["coverages"]:
            raise RunError("no coverages given")
        for text in cfg["coverages"]:
            label = coverage_label(text)
            try:
                cov = parse_coverage(text)
                path = None
                if kind == "spiral":
                    path = archimedes_spiral(size, size, cov, cfg["tol"])
                elif kind == "jittered_grid":
                    path = jittered_grid_path(size, size, cov, cfg["seed"], cfg["jitter"], cfg["tol"])
                if path is not None:
                    mask = rasterize(path, size, size)
                    save_path_csv(path, out / f"path_{kind}_{label}.csv")
                    written.append(f"path_{kind}_{label}.csv")
                else:
                    mask = random_grid_mask(size, size, cov, cfg["seed"])
            except (CoverageError, ValueError) as exc:
                failed.append(f"{kind} {text}: {exc}")
                continue
            save_mask(mask, out / f"mask_{kind}_{label}.pgm")
            written.append(f"mask_{kind}_{label}.pgm")
            rows.append(f"{kind},{cov!r},{label},{mask.coverage!r},"
                        f"{(mask.coverage - cov) / cov!r},{mask.count}")
    (out / "coverage.csv").write_text("\n".join(rows) + "\n")
    written.append("coverage.csv")
    return written, failed, {}


def cmd_corpus(cfg, out: Path):
    if cfg["synthetic"] < 1:
        raise RunError("--synthetic must be >= 1")
    size = cfg["size"]
    imgs = synthetic_corpus(cfg["synthetic"], size, size, cfg["corpus_seed"])
    written = []
    for i, img in enumerate(imgs):
        name = f"img_{i:04d}.pgm"
        save_image(img, out / name, bit_depth=16)
        written.append(name)
    return written, [], {}


def cmd_sweep(cfg, out: Path):
    corpus, corpus_info = load_corpus(cfg)
    covs = sorted(((parse_coverage(t), t) for t in cfg["coverages"]), key=lambda c: c[0])
    if not covs:
        raise RunError("no coverages given")
    if cfg["region"] not in REGIONS:
        raise RunError(f"unknown region {cfg['region']!r}")
    family = mask_family(cfg["kind"], cfg["jitter"])
    dose = float(cfg["dose"])
    written, failed, rows = [], [], []
    for mtext in cfg["methods"]:
        try:
            method = parse_method(mtext)
            res = coverage_sweep(corpus, family, [c for c, _ in covs], method, dose,
                                 cfg["seed"], cfg["region"], cfg["error_kind"], cfg["threads"])
        except ValueError as exc:
            failed.append(f"method {mtext}: {exc}")
            continue
        tag = mtext.replace(":", "_").replace(",", "_").replace("=", "")
        for row, (_, text) in zip(res, covs):
            row.method = tag
            rows.append(row)
            label = coverage_label(text)
            hist = histogram(row.rmses, cfg["hist_lo"], cfg["hist_hi"], cfg["bins"])
            name = f"hist_{tag}_{label}.csv"
            (out / name).write_text(hist.to_csv())
            written.append(name)
            if row.error_map is not None:
                save_error_map(row.error_map, out / f"errmap_{tag}_{label}")
                written += [f"errmap_{tag}_{label}{s}" for s in ("_mean.pgm", "_std.pgm", ".json")]
    if not rows:
        raise RunError("; ".join(failed) or "nothing to do")
    (out / "sweep.csv").write_text(sweep_csv(rows))
    written.append("sweep.csv")
    return written, failed, {"corpus": corpus_info}


def cmd_denoise_bench(cfg, out: Path):
    corpus, corpus_info = load_corpus(cfg)
    unknown = [m for m in cfg["methods"] if m not in SPECS_BY_NAME]
    if unknown:
        raise RunError(f"unknown denoisers {unknown}; choose from {sorted(SPECS_BY_NAME)}")
    specs = [SPECS_BY_NAME[m] for m in cfg["methods"]]
    rows = benchmark_denoisers(corpus, float(cfg["dose"]), specs, cfg["trials"], cfg["seed"],
                               cfg["threads"])
    (out / "bench.csv").write_text(bench_csv(rows))
    return ["bench.csv"], [], {"corpus": corpus_info}


def cmd_alrc(cfg, out: Path):
    ns = [parse_n(t) for t in cfg["n"]]
    batches = [int(b) for b in cfg["batches"]]
    opt = SGD(cfg["lr"], cfg["momentum"], cfg["nesterov"]) if cfg["optimizer"] == "sgd" \
        else Adam(cfg["lr"])
    problem = RegressionProblem(p=cfg["p"], data_seed=cfg["data_seed"])
    pool, pmap = _pool_map(cfg["threads"])
    try:
        cells = alrc_grid(problem, opt, ns, batches, cfg["repeats"], cfg["steps"], cfg["last"],
                          cfg["seed"], pmap, cfg["window"])
    finally:
        if pool:
            pool.shutdown()
    written = []
    curve_dir = out / "curves"
    curve_dir.mkdir(exist_ok=True)
    for c in cells:
        for r, curve in enumerate(c.curves):
            name = f"curves/curve_n{c.label}_b{c.batch}_r{r}.csv"
            lines = ["step,raw_loss,transformed_loss,multiplier"]
            lines += [f"{int(s)},{a!r},{b!r},{m!r}" for s, a, b, m in curve.tolist()]
            (out / name).write_text("\n".join(lines) + "\n")
            written.append(name)
    (out / "grid.csv").write_text(grid_csv(cells, cfg["scale"]))
    written.append("grid.csv")
    failed = [f"n={c.label} batch={c.batch}: {c.diverged}/{len(c.finals)} runs diverged"
              for c in cells if c.diverged]
    # divergence is a result, not a failure of the run
    for msg in failed:
        print(f"note: {msg}", file=sys.stderr)
    return written, [], {}


COMMANDS = {
    "paths": cmd_paths,
    "corpus": cmd_corpus,
    "sweep": cmd_sweep,
    "denoise-bench": cmd_denoise_bench,
    "alrc": cmd_alrc,
}


# -- argument parsing ------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="key = value file; flags given on the command line win")
    p.add_argument("--out", help="output directory (default out/<command>/<timestamp>/)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default $STEMSCAN_THREADS or all cores)")
    p.add_argument("--seed", type=int, default=0)


def _add_corpus(p):
    p.add_argument("--corpus", default=None, help="directory of .pgm/.png images")
    p.add_argument("--synthetic", type=int, default=0,
                   help="use N synthetic images when no --corpus is given")
    p.add_argument("--size", type=int, default=512, help="synthetic image size")
    p.add_argument("--corpus-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stemscan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"stemscan {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("paths", help="generate scan masks and paths")
    _add_common(p)
    p.add_argument("--kind", type=parse_kind, default="spiral")
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--coverages", type=_csv_list, default=[])
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--jitter", type=float, default=0.4)
    p.add_argument("--tol", type=float, default=0.02, help="relative coverage tolerance")

    p = sub.add_parser("corpus", help="write a synthetic image corpus")
    _add_common(p)
    p.add_argument("--synthetic", type=int, default=20, help="number of images")
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--corpus-seed", type=int, default=0)

    p = sub.add_parser("sweep", help="completion error against coverage")
    _add_common(p)
    _add_corpus(p)
    p.add_argument("--kind", type=parse_kind, default="spiral")
    p.add_argument("--jitter", type=float, default=0.4)
    p.add_argument("--coverages", type=_csv_list, default=["1/87.0", "1/50.0", "1/20.0"])
    p.add_argument("--methods", type=_method_list, default=["idw"],
                   help="e.g. nearest,idw:power=2,diffusion:tol=1e-6")
    p.add_argument("--dose", type=float, default=300.0)
    p.add_argument("--region", choices=REGIONS, default="all")
    p.add_argument("--error-kind", choices=("squared", "absolute"), default="squared")
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--hist-lo", type=float, default=0.0)
    p.add_argument("--hist-hi", type=float, default=0.224)

    p = sub.add_parser("denoise-bench", help="benchmark denoisers on shot-noise corrupted images")
    _add_common(p)
    _add_corpus(p)
    p.add_argument("--dose", type=float, default=300.0)
    p.add_argument("--methods", type=_csv_list, default=list(SPECS_BY_NAME))
    p.add_argument("--trials", type=int, default=200)

    p = sub.add_parser("alrc", help="ALRC threshold x batch size grid on a spiky regression task")
    _add_common(p)
    p.add_argument("--p", type=int, default=4, help="loss exponent")
    p.add_argument("--batches", type=_csv_list, default=["1", "4", "16", "64"])
    p.add_argument("--n", type=_csv_list, default=["2", "3", "4", "inf"],
                   help="clip thresholds; 'inf' clips nothing, 'none' skips the clipper")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--steps", type=int, default=20_000)
    p.add_argument("--last", type=int, default=5000, help="steps averaged for the final loss")
    p.add_argument("--window", type=int, default=500, help="learning-curve boxcar window")
    p.add_argument("--lr", type=float, default=4e-3)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--nesterov", action="store_true")
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=100.0, help="multiplier for tabulated losses")

    p = sub.add_parser("replay", help="rerun a command from its manifest.json")
    p.add_argument("manifest")
    p.add_argument("--out", help="output directory (default out/<command>/<timestamp>/)")
    return parser


def resolve(argv) -> tuple[str, dict]:
    """Parse argv (with any --config file underneath it) into (command, config)."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command != "replay" and args.config:
        # config values go first so that later command-line flags override them
        args = parser.parse_args([args.command] + read_config(args.config) + list(argv[1:]))
    cfg = vars(args)
    cmd = cfg.pop("command")
    if cmd != "replay":
        cfg.pop("config")
        if cfg["threads"] is None:
            cfg["threads"] = default_threads()
        if cfg["threads"] < 1:
            parser.error("--threads must be >= 1")
    return cmd, cfg


# -- running ---------------------------------------------------------------

def output_dir(command: str, explicit) -> Path:
    if explicit:
        out = Path(explicit)
        out.mkdir(parents=True, exist_ok=True)
        return out
    root = Path("out") / command
    stamp = datetime.datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    out = root / stamp
    out.mkdir(parents=True)
    (root / "latest").write_text(stamp + "\n")
    return out


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(command: str, cfg: dict) -> int:
    out = output_dir(command, cfg.get("out"))
    config = {k: v for k, v in cfg.items() if k != "out"}
    t0 = time.perf_counter()
    try:
        written, failed, extra = COMMANDS[command](config, out)
    except (RunError, ValueError, OSError) as exc:
        print(f"stemscan {command}: error: {exc}", file=sys.stderr)
        return 1
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "outputs": {name: _sha256(out / name) for name in written},
        "failed": failed,
        **extra,
        "timing": {"wall_s": time.perf_counter() - t0},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(out)
    for item in failed:
        print(f"failed: {item}", file=sys.stderr)
    return 1 if failed else 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    command, cfg = resolve(argv)
    if command == "replay":
        try:
            manifest = json.loads(Path(cfg["manifest"]).read_text())
            command, config = manifest["command"], dict(manifest["config"])
        except (OSError, ValueError, KeyError) as exc:
            print(f"stemscan replay: cannot read manifest: {exc}", file=sys.stderr)
            return 1
        if command not in COMMANDS:
            print(f"stemscan replay: unknown command {command!r}", file=sys.stderr)
            return 1
        config["out"] = cfg["out"]
        return run(command, config)
    return run(command, cfg)


if __name__ == "__main__":
    sys.exit(main())
