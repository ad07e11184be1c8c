import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import mbaq
from mbaq.errors import InvalidInputError
from mbaq.quality import SSIM_C1, SSIM_C2


def test_ssim_identity():
    rng = np.random.default_rng(0)
    x = rng.integers(0, 256, size=(16, 16)).astype(float)
    assert mbaq.ssim_block(x, x) == pytest.approx(1.0, abs=1e-12)


def test_ssim_black_vs_white():
    x = np.zeros((16, 16))
    y = np.full((16, 16), 255.0)
    expected = SSIM_C1 / (255.0**2 + SSIM_C1)
    assert mbaq.ssim_block(x, y) == pytest.approx(expected, rel=1e-12)


def test_ssim_symmetry():
    rng = np.random.default_rng(1)
    x = rng.integers(0, 256, size=(16, 16)).astype(float)
    y = rng.integers(0, 256, size=(16, 16)).astype(float)
    assert mbaq.ssim_block(x, y) == pytest.approx(mbaq.ssim_block(y, x), abs=1e-12)


def test_ssim_shape_mismatch():
    with pytest.raises(InvalidInputError):
        mbaq.ssim_block(np.zeros((16, 16)), np.zeros((8, 8)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ssim_bounded_for_8bit_blocks(seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 256, size=(16, 16)).astype(float)
    y = rng.integers(0, 256, size=(16, 16)).astype(float)
    value = mbaq.ssim_block(x, y)
    assert -1.0 <= value <= 1.0


def test_ssim_matches_direct_formula():
    # independent recomputation of the single-window statistic
    rng = np.random.default_rng(5)
    x = rng.integers(0, 256, size=(16, 16)).astype(float)
    y = np.clip(x + rng.normal(0, 12, size=(16, 16)), 0, 255)
    mx, my = x.mean(), y.mean()
    vx, vy = x.var(), y.var()
    cov = ((x - mx) * (y - my)).mean()
    expected = ((2 * mx * my + SSIM_C1) * (2 * cov + SSIM_C2)) / (
        (mx**2 + my**2 + SSIM_C1) * (vx + vy + SSIM_C2)
    )
    assert mbaq.ssim_block(x, y) == pytest.approx(expected, abs=1e-12)


def test_per_mb_ssim_self_is_ones(small_scene):
    grid = mbaq.per_mb_ssim(small_scene.frame, small_scene.frame)
    assert grid.shape == mbaq.partition(small_scene.frame).shape
    assert np.allclose(grid, 1.0)


def test_per_mb_ssim_matches_blockwise_loop(small_scene):
    recon = mbaq.encode_frame(
        small_scene.frame, mbaq.uniform_qp_map(mbaq.partition(small_scene.frame).shape, 40)
    ).recon
    grid = mbaq.per_mb_ssim(small_scene.frame, recon)
    raw = small_scene.frame.luma.astype(float)
    rec = recon.luma.astype(float)
    for r in range(grid.shape[0]):
        for c in range(grid.shape[1]):
            block_raw = raw[r * 16 : (r + 1) * 16, c * 16 : (c + 1) * 16]
            block_rec = rec[r * 16 : (r + 1) * 16, c * 16 : (c + 1) * 16]
            assert grid[r, c] == pytest.approx(mbaq.ssim_block(block_raw, block_rec), abs=1e-12)


def test_per_mb_ssim_low_quality_below_one(small_scene):
    low = mbaq.lowest_quality_encode(small_scene.frame)
    grid = mbaq.per_mb_ssim(small_scene.frame, low)
    assert grid.min() < 1.0
    assert np.abs(grid).max() <= 1.0


def test_per_mb_ssim_dimension_mismatch(small_scene, flat_frame):
    with pytest.raises(InvalidInputError):
        mbaq.per_mb_ssim(small_scene.frame, flat_frame)


def test_mean_ssim_non_increasing_in_qp(small_corpus):
    for scene in small_corpus[:3]:
        grid_shape = mbaq.partition(scene.frame).shape
        means = []
        for qp in (30, 34, 37, 43, 45):
            recon = mbaq.encode_frame(scene.frame, mbaq.uniform_qp_map(grid_shape, qp)).recon
            means.append(mbaq.per_mb_ssim(scene.frame, recon).mean())
        assert all(a >= b - 1e-12 for a, b in zip(means, means[1:]))


def test_psnr_identity_cap(small_scene):
    assert mbaq.psnr(small_scene.frame, small_scene.frame) == 99.0


def test_psnr_full_scale_error():
    a = mbaq.Frame(np.zeros((16, 16), dtype=np.uint8))
    b = mbaq.Frame(np.full((16, 16), 255, dtype=np.uint8))
    assert mbaq.psnr(a, b) == pytest.approx(0.0, abs=1e-12)


def test_psnr_orders_qp(small_scene):
    grid_shape = mbaq.partition(small_scene.frame).shape
    r30 = mbaq.encode_frame(small_scene.frame, mbaq.uniform_qp_map(grid_shape, 30)).recon
    r45 = mbaq.encode_frame(small_scene.frame, mbaq.uniform_qp_map(grid_shape, 45)).recon
    assert mbaq.psnr(small_scene.frame, r30) > mbaq.psnr(small_scene.frame, r45)
