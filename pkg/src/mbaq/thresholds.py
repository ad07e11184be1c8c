"""Percentile SSIM thresholds that bound the emphasis exploration.

A representative frame is encoded at the lowest quality; the per-macroblock
SSIM distribution of raw vs that reconstruction yields two nearest-rank
percentile thresholds, one gating RoI exploration and one gating background
exploration.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import DEFAULT_QP_TABLE, encode_frame, uniform_qp_map
from .errors import InvalidInputError
from .frames import Frame, partition
from .quality import per_mb_ssim

DEFAULT_PCT_ROI = 0.9
DEFAULT_PCT_BG = 0.5


@dataclass(frozen=True)
class EmphasisThresholds:
    """SSIM thresholds for RoI and background macroblocks."""

    t_roi: float
    t_bg: float
    pct_roi: float
    pct_bg: float


def lowest_quality_encode(frame: Frame) -> Frame:
    """Reconstruction of the frame at uniform emphasis 0 (the base QP)."""
    grid = partition(frame)
    qp = uniform_qp_map(grid.shape, DEFAULT_QP_TABLE[0])
    return encode_frame(frame, qp).recon


def threshold_from_values(values, pct: float) -> float:
    """Nearest-rank percentile: sort ascending, index round(pct * (N - 1))."""
    if not 0.0 <= pct <= 1.0:
        raise InvalidInputError(f"percentile {pct} outside [0, 1]")
    ordered = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if ordered.size == 0:
        raise InvalidInputError("empty value set")
    idx = int(round(pct * (ordered.size - 1)))
    return float(ordered[idx])


def proxy_emphasis_threshold(
    raw: Frame,
    low: Frame,
    pct_roi: float = DEFAULT_PCT_ROI,
    pct_bg: float = DEFAULT_PCT_BG,
) -> EmphasisThresholds:
    """Percentile thresholds over the per-macroblock SSIM distribution.

    All per-MB SSIM values of raw vs the low-quality reconstruction are
    sorted ascending and indexed at round(pct * (N - 1)).
    """
    grid = per_mb_ssim(raw, low)
    return EmphasisThresholds(
        t_roi=threshold_from_values(grid, pct_roi),
        t_bg=threshold_from_values(grid, pct_bg),
        pct_roi=float(pct_roi),
        pct_bg=float(pct_bg),
    )
