"""Frame quality metrics: per-macroblock single-window SSIM and PSNR."""
from __future__ import annotations

import numpy as np

from .errors import InvalidInputError
from .frames import MB_SIZE, Frame, pad_to_macroblocks, partition

# Standard SSIM stabilizers for 8-bit range, K1=0.01 / K2=0.03.
SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2

PSNR_CAP_DB = 99.0


def ssim_block(x: np.ndarray, y: np.ndarray) -> float:
    """Single-window SSIM between two equally shaped sample blocks.

    Uses population (biased) variances and the standard C1/C2 constants, so
    the result is defined even for constant blocks.
    """
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        raise InvalidInputError("empty block")
    mu_x = a.mean()
    mu_y = b.mean()
    var_x = (a * a).mean() - mu_x * mu_x
    var_y = (b * b).mean() - mu_y * mu_y
    cov = (a * b).mean() - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float(num / den)


def _blockify(frame: Frame) -> np.ndarray:
    padded = pad_to_macroblocks(frame).astype(np.float64)
    rows = padded.shape[0] // MB_SIZE
    cols = padded.shape[1] // MB_SIZE
    return padded.reshape(rows, MB_SIZE, cols, MB_SIZE).transpose(0, 2, 1, 3)


def per_mb_ssim(raw: Frame, other: Frame) -> np.ndarray:
    """SSIM of each aligned 16x16 macroblock pair, shape (n_rows, n_cols)."""
    if raw.width != other.width or raw.height != other.height:
        raise InvalidInputError(
            f"dimension mismatch {raw.width}x{raw.height} vs {other.width}x{other.height}"
        )
    a = _blockify(raw)
    b = _blockify(other)
    mu_x = a.mean(axis=(-2, -1))
    mu_y = b.mean(axis=(-2, -1))
    var_x = (a * a).mean(axis=(-2, -1)) - mu_x * mu_x
    var_y = (b * b).mean(axis=(-2, -1)) - mu_y * mu_y
    cov = (a * b).mean(axis=(-2, -1)) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
    grid = num / den
    assert grid.shape == partition(raw).shape
    return grid


def psnr(raw: Frame, recon: Frame, cap_db: float = PSNR_CAP_DB) -> float:
    """Peak signal-to-noise ratio in dB; identical frames return the cap."""
    if raw.width != recon.width or raw.height != recon.height:
        raise InvalidInputError(
            f"dimension mismatch {raw.width}x{raw.height} vs {recon.width}x{recon.height}"
        )
    diff = raw.luma.astype(np.float64) - recon.luma.astype(np.float64)
    mse = float((diff * diff).mean())
    if mse == 0.0:
        return float(cap_db)
    return float(min(10.0 * np.log10(255.0**2 / mse), cap_db))
