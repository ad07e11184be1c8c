"""Comparison strategies: uniform-QP search, binary RoI/BG maps, variance AQ."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .accuracy import AccuracyOracle
from .codec import DEFAULT_QP_TABLE, N_LEVELS, encode_frame, uniform_qp_map
from .errors import InvalidConfigError, InvalidInputError
from .frames import MB_SIZE, Frame, Scene, partition, pad_to_macroblocks

BINARY_QP_HIGH_QUALITY = 30
BINARY_QP_LOW_QUALITY = 40

VARIANCE_CLAMP = 6


@dataclass(frozen=True, eq=False)
class BaselineResult:
    """One method's QP map and its measured rate/accuracy outcome."""

    method: str
    qp_map: np.ndarray
    bits: int
    acc_c: float
    acc_r: float
    feasible: bool


def uniform_qp_search(
    frame: Frame,
    scene: Scene,
    oracle: AccuracyOracle,
    tau: float,
    qp_table=DEFAULT_QP_TABLE,
) -> BaselineResult:
    """Lowest-quality uniform emphasis level whose accuracy gap is within tau.

    Levels are scanned from 0 (coarsest) upward; if none satisfies the
    margin the top level is returned flagged infeasible.
    """
    grid = partition(frame)
    acc_r = float(oracle.score(frame, scene.gt_boxes))
    last = None
    for level in range(N_LEVELS):
        qp_map = uniform_qp_map(grid.shape, qp_table[level])
        result = encode_frame(frame, qp_map)
        acc_c = float(oracle.score(result.recon, scene.gt_boxes))
        feasible = abs(acc_c - acc_r) <= tau
        last = BaselineResult(
            method="uniform",
            qp_map=qp_map,
            bits=result.total_bits,
            acc_c=acc_c,
            acc_r=acc_r,
            feasible=feasible,
        )
        if feasible:
            return last
    return last


def binary_roi_assignment(
    regions: np.ndarray,
    qp_high_quality: int = BINARY_QP_HIGH_QUALITY,
    qp_low_quality: int = BINARY_QP_LOW_QUALITY,
) -> np.ndarray:
    """Two-level QP map: RoI macroblocks high quality, background low."""
    if qp_high_quality >= qp_low_quality:
        raise InvalidConfigError(
            f"quality inversion: high-quality QP {qp_high_quality} must be below {qp_low_quality}"
        )
    for qp in (qp_high_quality, qp_low_quality):
        if qp < 0 or qp > 51:
            raise InvalidConfigError(f"QP {qp} outside [0, 51]")
    roi = np.asarray(regions, dtype=bool)
    return np.where(roi, np.int64(qp_high_quality), np.int64(qp_low_quality))


def _mb_variance(frame: Frame) -> np.ndarray:
    grid = partition(frame)
    padded = pad_to_macroblocks(frame).astype(np.float64)
    blocks = padded.reshape(grid.n_rows, MB_SIZE, grid.n_cols, MB_SIZE).transpose(0, 2, 1, 3)
    mean = blocks.mean(axis=(-2, -1))
    return (blocks * blocks).mean(axis=(-2, -1)) - mean * mean


def variance_aq(
    frame: Frame,
    base_qp: int,
    strength: float = 1.0,
    clamp: int = VARIANCE_CLAMP,
    flat_low_qp: bool = True,
) -> np.ndarray:
    """Variance-driven QP offsets around a base QP, emulating codec AQ.

    Offsets are round(strength * (log2(var+1) - frame mean of log2(var+1))),
    clamped to +-clamp: textured macroblocks get higher QP and flat ones
    lower, the direction codec AQ uses to protect flat regions. Passing
    `flat_low_qp=False` flips the sign so flat blocks get the higher QP.
    """
    if base_qp < 6 or base_qp > 45:
        raise InvalidInputError(f"base QP {base_qp} outside [6, 45]")
    log_var = np.log2(_mb_variance(frame) + 1.0)
    centered = strength * (log_var - log_var.mean())
    if not flat_low_qp:
        centered = -centered
    offsets = np.clip(np.rint(centered).astype(np.int64), -clamp, clamp)
    return np.clip(base_qp + offsets, 0, 51)
