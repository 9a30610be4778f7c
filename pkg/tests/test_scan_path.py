import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stemscan.scan_path import (ARC_STEP, BinaryMask, CoverageError, ScanPath, SegmentParams,
                                archimedes_spiral, jittered_grid_path, load_mask, load_path_csv,
                                random_grid_mask, rasterize, save_mask, save_path_csv,
                                segment_path, spiral_positions, tune_coverage, uniform_grid_mask,
                                visit_counts)


def rel_err(mask, target):
    return abs(mask.coverage - target) / target


@pytest.mark.parametrize("target,lo,hi", [(1 / 20, 0.049, 0.051), (1 / 17.9, 0.0548, 0.0570),
                                          (1 / 23.04, 0.04254, 0.04427)])
def test_spiral_coverage_examples(target, lo, hi):
    mask = rasterize(archimedes_spiral(512, 512, target), 512, 512)
    assert lo <= mask.coverage <= hi


def test_spiral_samples_are_dense_and_inside():
    pos = spiral_positions(128, 128, 3.0)
    steps = np.hypot(*np.diff(pos, axis=0).T)
    # consecutive samples along the curve are ARC_STEP apart; larger jumps are
    # exits from and re-entries into the image
    inside_steps = steps[steps < 2]
    assert np.all(inside_steps <= ARC_STEP + 1e-6)
    assert pos[:, 0].min() >= -0.5 and pos[:, 0].max() < 127.5
    assert pos[:, 1].min() >= -0.5 and pos[:, 1].max() < 127.5


@pytest.mark.parametrize("target", [1 / 10, 1 / 40, 1 / 100])
def test_spiral_trace_is_8_connected(target):
    mask = rasterize(archimedes_spiral(256, 256, target), 256, 256).bits
    p = np.pad(mask, 1).astype(int)
    nbrs = sum(np.roll(np.roll(p, dy, 0), dx, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
               if dy or dx)[1:-1, 1:-1]
    isolated = mask & (nbrs == 0)
    # the trace may only end where it starts (centre) or at the image edge
    rows, cols = np.nonzero(isolated)
    on_edge = (rows == 0) | (rows == 255) | (cols == 0) | (cols == 255)
    assert np.all(on_edge)


def test_jittered_grid_examples():
    a = jittered_grid_path(512, 512, 1 / 20, seed=0)
    assert 0.049 <= rasterize(a, 512, 512).coverage <= 0.051
    b = jittered_grid_path(512, 512, 1 / 20, seed=0)
    np.testing.assert_array_equal(a.positions, b.positions)
    c = jittered_grid_path(512, 512, 1 / 20, seed=1)
    assert not np.array_equal(a.positions, c.positions)


@pytest.mark.parametrize("target", [1 / 10, 1 / 40, 1 / 100])
def test_jittered_grid_coverage(target):
    path = jittered_grid_path(512, 512, target, seed=3)
    assert rel_err(rasterize(path, 512, 512), target) <= 0.02


def test_zero_jitter_gives_straight_rows():
    path = jittered_grid_path(256, 256, 1 / 16, seed=5, jitter=0.0)
    ys = path.positions[:, 1]
    rows = np.unique(ys)
    assert len(rows) == 16
    mask = rasterize(path, 256, 256).bits
    assert np.all(mask[mask.any(axis=1)])


def test_uniform_grid_examples():
    m4 = uniform_grid_mask(512, 512, 4)
    assert m4.count == 128**2 and m4.coverage == 1 / 16
    m5 = uniform_grid_mask(512, 512, 5)
    assert m5.count == 10609 and m5.coverage == 10609 / 262144
    assert uniform_grid_mask(9, 9, 1).bits.all()


def test_random_grid_examples():
    assert random_grid_mask(512, 512, 1 / 20, seed=7).count == 13107
    assert random_grid_mask(32, 16, 1.0, seed=7).bits.all()
    a = random_grid_mask(64, 64, 0.1, seed=1)
    b = random_grid_mask(64, 64, 0.1, seed=2)
    assert not np.array_equal(a.bits, b.bits)


@given(st.integers(1, 64), st.integers(1, 64), st.floats(1e-4, 1.0), st.integers(0, 2**31))
def test_random_grid_count_rule(h, w, target, seed):
    mask = random_grid_mask(h, w, target, seed)
    assert mask.count == max(1, math.floor(target * h * w + 0.5))
    assert 0 < mask.coverage <= 1
    assert mask.coverage == mask.count / (h * w)


def test_segment_path_examples():
    p = segment_path(SegmentParams(5, 3, math.sqrt(2), (3.0, 3.0), [0.3, 1.0, 2.0, -0.5, 0.7]))
    assert len(p) == 15
    for t in range(5):
        seg = p.positions[3 * t:3 * t + 3]
        np.testing.assert_allclose(np.hypot(*np.diff(seg, axis=0).T), math.sqrt(2), atol=1e-9)
    q = segment_path(SegmentParams(1, 4, 1.0, (0.0, 0.0), [0.0]))
    np.testing.assert_allclose(q.positions, [[0, 0], [1, 0], [2, 0], [3, 0]], atol=1e-12)


@given(st.integers(1, 6), st.integers(1, 5), st.floats(0.1, 3.0),
       st.lists(st.floats(-math.pi, math.pi), min_size=6, max_size=6))
def test_segment_arc_length(T, n, d, headings):
    p = segment_path(SegmentParams(T, n, d, (4.0, 4.0), headings[:T]))
    want = T * (n - 1) * d
    assert abs(p.arc_length() - want) <= 1e-9 * max(want, 1.0)


def test_segment_params_validation():
    with pytest.raises(ValueError):
        SegmentParams(0, 3, 1.0, (0, 0), [])
    with pytest.raises(ValueError):
        SegmentParams(2, 3, 1.0, (0, 0), [0.0])
    with pytest.raises(ValueError):
        SegmentParams(1, 3, 0.0, (0, 0), [0.0])


def test_rasterize_rounding_and_clamping():
    m = rasterize(ScanPath([[3.4, 7.6]], "segment"), 10, 10)
    assert m.bits[8, 3] and m.count == 1
    m = rasterize(ScanPath([[-2.0, 5.0]], "segment"), 8, 8)
    assert m.bits[5, 0] and m.count == 1
    # exact halves round up
    m = rasterize(ScanPath([[2.5, 0.5]], "segment"), 8, 8)
    assert m.bits[1, 3]


@given(st.lists(st.tuples(st.integers(0, 15), st.integers(0, 15)), min_size=1, max_size=50))
def test_rasterize_popcount_is_distinct_positions(points):
    path = ScanPath(np.array(points, dtype=float), "segment")
    mask = rasterize(path, 16, 16)
    assert mask.count == len(set(points))
    assert visit_counts(path, 16, 16).sum() == len(points)


def test_scan_path_validation():
    with pytest.raises(ValueError):
        ScanPath(np.empty((0, 2)), "spiral")
    with pytest.raises(ValueError):
        ScanPath([[0.0, np.nan]], "spiral")
    with pytest.raises(ValueError):
        ScanPath([[0.0, 0.0]], "zigzag")


def test_tune_uniform_family_in_log_steps():
    res = tune_coverage(lambda s: uniform_grid_mask(512, 512, int(s)).coverage, 1 / 16, tol=0.0,
                        bracket=(1, 64), integer=True)
    assert res.param == 4 and res.coverage == 1 / 16 and res.converged
    assert res.iterations <= math.ceil(math.log2(63))


def test_tune_outside_bracket_raises():
    with pytest.raises(CoverageError):
        tune_coverage(lambda x: x, 2.0, bracket=(0.0, 1.0))
    with pytest.raises(CoverageError):
        archimedes_spiral(64, 64, 1 / 500)


def test_tune_decreasing_family():
    res = tune_coverage(lambda x: 1.0 / x, 0.2, tol=1e-6, bracket=(1.0, 100.0))
    assert res.converged and abs(res.param - 5.0) < 1e-4


def test_path_and_mask_files_round_trip(tmp_path):
    path = jittered_grid_path(64, 64, 0.1, seed=11)
    save_path_csv(path, tmp_path / "p.csv")
    first = (tmp_path / "p.csv").read_text().splitlines()[0]
    assert first == "# kind=jittered_grid seed=11"
    back = load_path_csv(tmp_path / "p.csv")
    np.testing.assert_array_equal(back.positions, path.positions)
    assert back.kind == path.kind and back.seed == 11
    mask = rasterize(path, 64, 64)
    save_mask(mask, tmp_path / "m.pgm")
    assert np.array_equal(load_mask(tmp_path / "m.pgm").bits, mask.bits)


def test_mask_properties():
    m = BinaryMask(np.eye(4, dtype=bool))
    assert (m.height, m.width, m.count, m.coverage) == (4, 4, 4, 0.25)
    m.bits[0, 1] = True
    assert m.count == 5
