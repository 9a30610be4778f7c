"""Print achieved spiral coverage for the standard coverage list."""

import argparse
import time

from stemscan.scan_path import archimedes_spiral, rasterize

COVERAGES = ["1/10", "1/17.9", "1/20", "1/23.04", "1/27.3", "1/38.2", "1/40", "1/50",
             "1/60.5", "1/73.7", "1/87", "1/100"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=512)
    args = ap.parse_args()
    print("target,achieved,relative_error,seconds")
    for label in COVERAGES:
        target = 1 / float(label.split("/")[1])
        t0 = time.perf_counter()
        mask = rasterize(archimedes_spiral(args.size, args.size, target), args.size, args.size)
        dt = time.perf_counter() - t0
        print(f"{label},{mask.coverage:.6f},{(mask.coverage - target) / target:+.4f},{dt:.2f}")


if __name__ == "__main__":
    main()
