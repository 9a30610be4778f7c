import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stemscan.acquisition import SENTINEL, DoseModel, PartialScan, sample_scan
from stemscan.completion import (IDW, ConvergenceWarning, Diffusion, Nearest, complete,
                                 coverage_sweep, parse_method, region_rmse, sweep_csv)
from stemscan.scan_path import BinaryMask, random_grid_mask, uniform_grid_mask

METHODS = [Nearest(), IDW(), IDW(power=1.0, k=3), Diffusion(tol=1e-7)]


def scan_of(values, bits):
    return PartialScan(np.where(bits, values, SENTINEL), BinaryMask(bits), DoseModel(math.inf))


def dense_harmonic(values, bits):
    """Discrete harmonic extension by a dense solve of the 5-point Laplacian, edges replicated."""
    h, w = bits.shape
    free = np.flatnonzero(~bits.ravel())
    pos = {p: i for i, p in enumerate(free)}
    A = np.zeros((len(free), len(free)))
    rhs = np.zeros(len(free))
    flat = values.ravel()
    for i, p in enumerate(free):
        r, c = divmod(p, w)
        for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            rr, cc = min(max(rr, 0), h - 1), min(max(cc, 0), w - 1)
            q = rr * w + cc
            A[i, i] += 1.0
            if q in pos:
                A[i, pos[q]] -= 1.0
            else:
                rhs[i] += flat[q]
    out = values.astype(float).copy().ravel()
    out[free] = np.linalg.solve(A, rhs)
    return out.reshape(h, w)


def test_harmonic_ring_example():
    n = 16
    y, x = np.mgrid[0:n, 0:n] / (n - 1)
    f = x * y  # discretely harmonic
    ring = np.zeros((n, n), bool)
    ring[0, :] = ring[-1, :] = ring[:, 0] = ring[:, -1] = True
    out = complete(scan_of(f, ring), Diffusion(tol=1e-8))
    assert np.max(np.abs(out - f)) <= 1e-4
    assert np.max(np.abs(out - dense_harmonic(f, ring))) <= 1e-4


@given(st.integers(4, 32), st.integers(4, 32), st.floats(0.02, 0.5), st.integers(0, 2**32))
def test_diffusion_matches_dense_solve(h, w, frac, seed):
    rng = np.random.default_rng(seed)
    values = rng.random((h, w))
    bits = random_grid_mask(h, w, frac, seed).bits
    out = complete(scan_of(values, bits), Diffusion(iterations=100_000, tol=1e-9))
    assert np.max(np.abs(out - dense_harmonic(values, bits))) <= 1e-4


@pytest.mark.parametrize("method", METHODS)
def test_full_mask_is_identity(method):
    img = np.random.default_rng(0).random((12, 12))
    out = complete(scan_of(img, np.ones((12, 12), bool)), method)
    np.testing.assert_array_equal(out, img)


@pytest.mark.parametrize("method", METHODS)
def test_single_pixel_gives_constant(method):
    bits = np.zeros((9, 11), bool)
    bits[4, 2] = True
    out = complete(scan_of(np.full((9, 11), 0.37), bits), method)
    np.testing.assert_allclose(out, 0.37, atol=1e-12)


@pytest.mark.parametrize("method", METHODS)
def test_scanned_pixels_preserved_and_hull(method):
    rng = np.random.default_rng(3)
    img = rng.random((48, 40))
    mask = random_grid_mask(48, 40, 0.05, 7)
    scan = sample_scan(img, mask, 300, 1)
    out = complete(scan, method)
    np.testing.assert_array_equal(out[mask.bits], scan.values[mask.bits])
    v = scan.values[mask.bits]
    assert out.min() >= v.min() - 1e-12 and out.max() <= v.max() + 1e-12


def test_idw_matches_direct_formula():
    rng = np.random.default_rng(5)
    img = rng.random((10, 10))
    bits = random_grid_mask(10, 10, 0.2, 2).bits
    out = complete(scan_of(img, bits), IDW(power=2.0, k=4))
    src = np.argwhere(bits)
    for r, c in np.argwhere(~bits)[:10]:
        d = np.hypot(*(src - [r, c]).T)
        nn = np.argsort(d, kind="stable")[:4]
        wgt = d[nn] ** -2.0
        want = (wgt * img[tuple(src[nn].T)]).sum() / wgt.sum()
        assert abs(out[r, c] - want) < 1e-12


def test_diffusion_warns_at_cap():
    img = np.random.default_rng(0).random((32, 32))
    bits = uniform_grid_mask(32, 32, 8).bits
    with pytest.warns(ConvergenceWarning):
        complete(scan_of(img, bits), Diffusion(iterations=2, tol=1e-12))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        complete(scan_of(img, bits), Diffusion())


def test_empty_mask_rejected():
    with pytest.raises(ValueError):
        complete(scan_of(np.zeros((4, 4)), np.zeros((4, 4), bool)), IDW())


def test_parse_method():
    assert parse_method("idw") == IDW()
    assert parse_method("idw:power=3,k=4") == IDW(3.0, 4)
    assert parse_method("diffusion:tol=1e-8,iterations=50") == Diffusion(50, 1e-8)
    assert parse_method("nearest") == Nearest()
    for bad in ("cubic", "idw:power=0", "diffusion:iterations=0"):
        with pytest.raises(ValueError):
            parse_method(bad)


def test_region_rmse():
    a = np.zeros((4, 4))
    b = np.full((4, 4), 0.25)
    mask = uniform_grid_mask(4, 4, 2)
    for region in ("all", "scanned", "unscanned"):
        assert region_rmse(a, b, mask, region) == pytest.approx(0.25, abs=1e-15)
    with pytest.raises(ValueError):
        region_rmse(a, b, mask, "edges")


def grid_family(h, w, cov, seed):
    return uniform_grid_mask(h, w, max(1, round(1 / math.sqrt(cov))))


def test_sweep_full_coverage_noiseless_is_exact():
    img = np.random.default_rng(0).random((16, 16))
    (row,) = coverage_sweep([img], grid_family, [1.0], IDW(), math.inf)
    assert row.mean_rmse <= 1e-6 and row.n_images == 1


def test_sweep_deterministic_and_thread_independent():
    rng = np.random.default_rng(1)
    corpus = [rng.random((24, 24)) for _ in range(5)]
    a = coverage_sweep(corpus, grid_family, [1 / 16, 1 / 4], IDW(), 300, seed=4)
    b = coverage_sweep(corpus, grid_family, [1 / 16, 1 / 4], IDW(), 300, seed=4, threads=3)
    assert sweep_csv(a) == sweep_csv(b)
    for ra, rb in zip(a, b):
        np.testing.assert_array_equal(ra.error_map.sum, rb.error_map.sum)
    assert sweep_csv(a).splitlines()[0] == "coverage,method,mean_rmse,std_rmse,n_images"


def test_sweep_rejects_bad_input():
    with pytest.raises(ValueError):
        coverage_sweep([], grid_family, [0.25])
    with pytest.raises(ValueError):
        coverage_sweep([np.zeros((8, 8))], grid_family, [0.5, 0.25])
