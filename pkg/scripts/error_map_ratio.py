"""Far/near ratio of the mean completion error map around a spiral scan."""

import argparse

from scipy import ndimage

from stemscan.completion import IDW, Nearest, coverage_sweep
from stemscan.scan_path import archimedes_spiral, rasterize
from stemscan.synthetic import synthetic_corpus


def spiral(h, w, cov, seed):
    return rasterize(archimedes_spiral(h, w, cov), h, w)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--images", type=int, default=50)
    ap.add_argument("--draws", type=int, default=4, help="noise draws per image")
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--coverage", type=float, default=1 / 20)
    ap.add_argument("--dose", type=float, default=300.0)
    args = ap.parse_args()
    corpus = synthetic_corpus(args.images, args.size, args.size, seed=11) * args.draws
    dist = ndimage.distance_transform_edt(~spiral(args.size, args.size, args.coverage, 0).bits)
    print("method,instances,mean_near,mean_far,ratio")
    for method in (Nearest(), IDW()):
        (row,) = coverage_sweep(corpus, spiral, [args.coverage], method, args.dose, seed=5,
                                error_kind="absolute")
        m = row.error_map.mean()
        near, far = m[dist <= 1].mean(), m[dist > 5].mean()
        print(f"{method.name},{row.error_map.n},{near:.5f},{far:.5f},{far / near:.3f}")


if __name__ == "__main__":
    main()
