import numpy as np
import pytest

import mbaq
from mbaq.errors import InvalidInputError
from mbaq.thresholds import DEFAULT_PCT_BG, DEFAULT_PCT_ROI, threshold_from_values


def test_lowest_quality_encode_is_deterministic(small_scene):
    a = mbaq.lowest_quality_encode(small_scene.frame)
    b = mbaq.lowest_quality_encode(small_scene.frame)
    np.testing.assert_array_equal(a.luma, b.luma)


def test_lowest_quality_encode_degrades(small_scene):
    low = mbaq.lowest_quality_encode(small_scene.frame)
    assert mbaq.per_mb_ssim(small_scene.frame, low).mean() < 1.0


def test_lowest_quality_encode_zero_frame_unchanged():
    frame = mbaq.Frame(np.zeros((32, 32), dtype=np.uint8))
    recon = mbaq.lowest_quality_encode(frame)
    np.testing.assert_array_equal(recon.luma, frame.luma)


def test_default_percentiles():
    assert DEFAULT_PCT_ROI == 0.9
    assert DEFAULT_PCT_BG == 0.5
    low = mbaq.lowest_quality_encode(
        mbaq.Frame(np.arange(32 * 32, dtype=np.int64).reshape(32, 32) % 256)
    )
    # defaults applied when not given
    frame = mbaq.Frame(np.arange(32 * 32, dtype=np.int64).reshape(32, 32) % 256)
    thr = mbaq.proxy_emphasis_threshold(frame, low)
    assert thr.pct_roi == 0.9 and thr.pct_bg == 0.5


def test_threshold_constant_distribution():
    values = np.full(37, 0.625)
    assert threshold_from_values(values, 0.9) == 0.625
    assert threshold_from_values(values, 0.5) == 0.625


def test_threshold_hundred_value_example():
    # D = {0.00, 0.01, ..., 0.99}: round(0.9*99)=89, round(0.5*99)=50
    values = np.arange(100) / 100.0
    assert threshold_from_values(values, 0.9) == pytest.approx(0.89)
    assert threshold_from_values(values, 0.5) == pytest.approx(0.50)


def test_threshold_permutation_invariant():
    rng = np.random.default_rng(3)
    values = rng.uniform(-1, 1, size=64)
    shuffled = rng.permutation(values)
    for pct in (0.0, 0.25, 0.5, 0.9, 1.0):
        assert threshold_from_values(values, pct) == threshold_from_values(shuffled, pct)


def test_threshold_monotone_in_percentile():
    rng = np.random.default_rng(4)
    values = rng.uniform(0, 1, size=47)
    points = [threshold_from_values(values, p) for p in np.linspace(0, 1, 21)]
    assert all(a <= b for a, b in zip(points, points[1:]))


def test_threshold_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        threshold_from_values([], 0.5)
    with pytest.raises(InvalidInputError):
        threshold_from_values([1.0], 1.5)


def test_thresholds_ordered_when_percentiles_ordered(small_scene):
    low = mbaq.lowest_quality_encode(small_scene.frame)
    thr = mbaq.proxy_emphasis_threshold(small_scene.frame, low, 0.9, 0.5)
    assert thr.t_roi >= thr.t_bg


def test_threshold_matches_sort_oracle(small_scene):
    low = mbaq.lowest_quality_encode(small_scene.frame)
    grid = mbaq.per_mb_ssim(small_scene.frame, low)
    ordered = sorted(grid.ravel().tolist())
    for pct in (0.1, 0.5, 0.9):
        expected = ordered[int(round(pct * (len(ordered) - 1)))]
        assert threshold_from_values(grid, pct) == expected
