"""Denoiser benchmark table on a synthetic corpus."""

import argparse

from stemscan.denoise import DEFAULT_SPECS, bench_csv, benchmark_denoisers
from stemscan.synthetic import synthetic_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--images", type=int, default=20)
    ap.add_argument("--size", type=int, default=512)
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--dose", type=float, default=300.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    corpus = synthetic_corpus(args.images, args.size, args.size, seed=args.seed)
    rows = benchmark_denoisers(corpus, args.dose, DEFAULT_SPECS, args.trials, args.seed)
    print(bench_csv(rows), end="")


if __name__ == "__main__":
    main()
