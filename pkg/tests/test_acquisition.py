import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy import stats

from stemscan.acquisition import (SENTINEL, DoseModel, PartialScan, apply_poisson,
                                  infill_nearest, nearest_scanned, poisson_counts, sample_scan,
                                  save_partial_scan, segment_duration_noise)
from stemscan.image import load_image
from stemscan.scan_path import (BinaryMask, ScanPath, archimedes_spiral, random_grid_mask,
                                rasterize)


def test_zero_intensity_stays_zero():
    out = apply_poisson(np.zeros((16, 16)), 300, seed=4)
    assert np.all(out == 0)


def test_poisson_mean_at_high_dose():
    out = apply_poisson(np.full((512, 512), 0.5), 2500, seed=0)
    band = 3 * math.sqrt(0.5 / 2500 / 512**2)
    assert abs(out.mean() - 0.5) <= band


def test_variance_scales_inversely_with_dose():
    img = np.full((512, 512), 0.5)
    ratio = apply_poisson(img, 200, seed=1).var() / apply_poisson(img, 2500, seed=2).var()
    assert abs(ratio - 12.5) <= 1.25


def test_apply_poisson_is_seeded():
    img = np.random.default_rng(0).random((32, 32))
    np.testing.assert_array_equal(apply_poisson(img, 300, 5), apply_poisson(img, 300, 5))
    assert not np.array_equal(apply_poisson(img, 300, 5), apply_poisson(img, 300, 6))


def test_apply_poisson_rejects_out_of_range():
    with pytest.raises(ValueError):
        apply_poisson(np.array([[1.5]]), 300)
    with pytest.raises(ValueError):
        DoseModel(0.0)


def test_infinite_dose_is_noiseless():
    img = np.random.default_rng(0).random((8, 8))
    np.testing.assert_array_equal(apply_poisson(img, math.inf, 3), img)


@pytest.mark.parametrize("lam", [0.3, 4.0, 9.99, 10.0, 57.0, 999.0])
def test_poisson_counts_match_exact_quantiles(lam):
    u = np.random.default_rng(1).random(5000)
    k = poisson_counts(np.full(u.shape, lam), u)
    np.testing.assert_array_equal(k, stats.poisson.ppf(u, lam))


def test_poisson_counts_large_mean_moments():
    u = np.random.default_rng(2).random(200_000)
    k = poisson_counts(np.full(u.shape, 5000.0), u)
    assert abs(k.mean() - 5000) < 3 * math.sqrt(5000 / u.size)
    assert abs(k.var() / 5000 - 1) < 0.02


@given(hnp.arrays(np.float64, (6, 6), elements=st.floats(0, 1)),
       st.floats(1.0, 5000.0), st.integers(0, 2**32))
def test_poisson_outputs_are_counts(img, dose, seed):
    out = apply_poisson(img, dose, seed)
    k = out * dose
    np.testing.assert_allclose(k, np.rint(k), atol=1e-6 * max(1.0, dose))
    assert out.min() >= 0


def test_sample_scan_masks():
    img = np.random.default_rng(0).random((40, 40))
    full = BinaryMask(np.ones((40, 40), bool))
    np.testing.assert_array_equal(sample_scan(img, full, 300, 9).values, apply_poisson(img, 300, 9))
    empty = sample_scan(img, BinaryMask(np.zeros((40, 40), bool)), 300, 9)
    assert empty.values.shape == (40, 40) and np.all(empty.values == SENTINEL)
    with pytest.raises(ValueError):
        sample_scan(img, BinaryMask(np.ones((4, 4), bool)), 300)


def test_sample_scan_counts_spiral_pixels():
    img = np.random.default_rng(0).random((256, 256))
    mask = rasterize(archimedes_spiral(256, 256, 1 / 20), 256, 256)
    scan = sample_scan(img, mask, 300, 1)
    assert np.count_nonzero(scan.values != SENTINEL) == mask.count


def single_visit_path(h, w):
    # one position on every pixel of alternate rows
    ys, xs = np.mgrid[0:h:2, 0:w]
    return ScanPath(np.column_stack([xs.ravel(), ys.ravel()]).astype(float), "segment")


def test_segment_noise_identity_cases():
    img = np.full((64, 64), 0.5)
    path = single_visit_path(64, 64)
    scan = sample_scan(img, rasterize(path, 64, 64), 100, 0)
    np.testing.assert_array_equal(segment_duration_noise(scan, path, 0.0, 1).values, scan.values)
    doubled = ScanPath(np.vstack([path.positions, path.positions]), "segment")
    np.testing.assert_array_equal(segment_duration_noise(scan, doubled, 5.0, 1).values,
                                  scan.values)


def test_segment_noise_std():
    img = np.full((256, 256), 0.5)
    path = single_visit_path(256, 256)
    mask = rasterize(path, 256, 256)
    scan = PartialScan(np.where(mask.bits, img, SENTINEL), mask, DoseModel(100.0))
    out = segment_duration_noise(scan, path, 1.0, seed=3)
    added = (out.values - scan.values)[mask.bits]
    assert added.size >= 10_000
    assert abs(added.std() - 0.1) <= 0.015
    assert np.all(out.values[~mask.bits] == SENTINEL)


def test_segment_noise_rejects_inconsistent_path():
    img = np.full((16, 16), 0.5)
    path = single_visit_path(16, 16)
    scan = sample_scan(img, random_grid_mask(16, 16, 0.3, 0), 100, 0)
    with pytest.raises(ValueError):
        segment_duration_noise(scan, path, 1.0)


def brute_force_nearest(bits):
    h, w = bits.shape
    src = np.flatnonzero(bits)
    sr, sc = np.divmod(src, w)
    out = np.empty((h, w), dtype=int)
    for r in range(h):
        for c in range(w):
            d2 = (sr - r) ** 2 + (sc - c) ** 2
            out[r, c] = src[d2 == d2.min()].min()
    return out


def test_voronoi_halves_with_tie_rule():
    bits = np.zeros((8, 8), bool)
    bits[0, 0] = bits[7, 7] = True
    values = np.full((8, 8), SENTINEL)
    values[0, 0], values[7, 7] = 0.2, 0.8
    out = infill_nearest(PartialScan(values, BinaryMask(bits), DoseModel(300.0)))
    r, c = np.mgrid[0:8, 0:8]
    d0 = r**2 + c**2
    d1 = (r - 7) ** 2 + (c - 7) ** 2
    want = np.where(d0 <= d1, 0.2, 0.8)
    np.testing.assert_array_equal(out, want)
    # the anti-diagonal is tied and goes to (0, 0)
    assert np.all(out[r + c == 7] == 0.2)


@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32), st.floats(0.01, 1.0))
def test_nearest_matches_brute_force(h, w, seed, frac):
    mask = random_grid_mask(h, w, frac, seed)
    np.testing.assert_array_equal(nearest_scanned(mask), brute_force_nearest(mask.bits))


def test_nearest_ties_beyond_first_neighbours():
    # many equidistant sources around the centre force the tie search to widen
    bits = np.zeros((21, 21), bool)
    for r, c in [(10, 0), (10, 20), (0, 10), (20, 10), (4, 2), (2, 4), (16, 2), (2, 16),
                 (18, 4), (4, 18), (16, 18), (18, 16)]:
        bits[r, c] = True
    mask = BinaryMask(bits)
    np.testing.assert_array_equal(nearest_scanned(mask), brute_force_nearest(bits))


def test_infill_trivial_cases():
    values = np.full((5, 6), SENTINEL)
    values[2, 3] = 0.7
    bits = values != SENTINEL
    out = infill_nearest(PartialScan(values, BinaryMask(bits), DoseModel(10.0)))
    assert np.all(out == 0.7)
    img = np.random.default_rng(0).random((5, 6))
    full = PartialScan(img, BinaryMask(np.ones((5, 6), bool)), DoseModel(10.0))
    np.testing.assert_array_equal(infill_nearest(full), img)
    with pytest.raises(ValueError):
        infill_nearest(PartialScan(values, BinaryMask(np.zeros((5, 6), bool)), DoseModel(10.0)))


def test_save_partial_scan(tmp_path):
    img = np.random.default_rng(0).random((32, 32))
    mask = random_grid_mask(32, 32, 0.2, 1)
    scan = sample_scan(img, mask, 300, 2)
    save_partial_scan(scan, tmp_path / "s", kind="random_grid")
    meta = json.loads((tmp_path / "s.json").read_text())
    assert meta == {"dose": 300.0, "seed": 2, "kind": "random_grid"}
    assert np.array_equal(load_image(tmp_path / "s_mask.pgm") > 0.5, mask.bits)
    vals = load_image(tmp_path / "s_values.pgm")
    assert np.all(vals[~mask.bits] == 0)
    np.testing.assert_allclose(vals[mask.bits], np.clip(scan.values[mask.bits], 0, 1),
                               atol=0.5 / 65535 + 1e-12)
