"""Unclipped against ALRC training at an unstable learning rate, one line per repeat."""

import argparse

from stemscan.alrc import SGD, Alrc, NoClip, RegressionProblem, run_synthetic_training
from stemscan.seeds import derive_seed


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lr", type=float, default=4e-3)
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--batch", type=int, default=1)
    ap.add_argument("--n", type=float, default=3.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    prob = RegressionProblem(p=4)
    opt = SGD(args.lr)
    print("repeat,unclipped_final,unclipped_diverged_at,alrc_final,alrc_diverged")
    for r in range(args.repeats):
        seed = derive_seed(args.seed, r)
        a = run_synthetic_training(prob, opt, NoClip(), args.steps, args.batch, seed)
        b = run_synthetic_training(prob, opt, Alrc(n_up=args.n), args.steps, args.batch, seed)
        print(f"{r},{a.final_mean():.6g},{a.first_nonfinite},{b.final_mean():.6g},{b.diverged}")


if __name__ == "__main__":
    main()
