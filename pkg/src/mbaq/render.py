"""Heatmap rendering of emphasis and QP maps to binary PPM images."""
from __future__ import annotations

import numpy as np

from .codec import N_LEVELS
from .errors import InvalidInputError
from .frames import MB_SIZE

LEGEND_ROWS = 16


def _ramp(t: np.ndarray) -> np.ndarray:
    # Blue (low) to red (high).
    t = np.clip(t, 0.0, 1.0)
    rgb = np.stack([255.0 * t, np.zeros_like(t), 255.0 * (1.0 - t)], axis=-1)
    return np.rint(rgb).astype(np.uint8)


def render_emphasis_heatmap(levels: np.ndarray) -> np.ndarray:
    """16x16 tiles in a 5-step blue-to-red ramp, with a legend strip below."""
    lv = np.asarray(levels)
    if lv.ndim != 2 or lv.size == 0:
        raise InvalidInputError("emphasis map must be a non-empty 2-D grid")
    if lv.min() < 0 or lv.max() >= N_LEVELS:
        raise InvalidInputError("emphasis map entries outside 0..4")
    body = _ramp(lv.astype(np.float64) / (N_LEVELS - 1))
    return _assemble(body, discrete_steps=N_LEVELS)


def render_qp_heatmap(qp_map: np.ndarray) -> np.ndarray:
    """16x16 tiles in a continuous blue-to-red ramp over QP in [0, 51]."""
    qp = np.asarray(qp_map)
    if qp.ndim != 2 or qp.size == 0:
        raise InvalidInputError("QP map must be a non-empty 2-D grid")
    if qp.min() < 0 or qp.max() > 51:
        raise InvalidInputError("QP map entries outside [0, 51]")
    body = _ramp(qp.astype(np.float64) / 51.0)
    return _assemble(body, discrete_steps=0)


def _assemble(tile_colors: np.ndarray, discrete_steps: int) -> np.ndarray:
    body = np.repeat(np.repeat(tile_colors, MB_SIZE, axis=0), MB_SIZE, axis=1)
    width = body.shape[1]
    x = np.arange(width, dtype=np.float64) / max(width - 1, 1)
    if discrete_steps:
        x = np.floor(x * discrete_steps).clip(max=discrete_steps - 1) / (discrete_steps - 1)
    legend = np.broadcast_to(_ramp(x)[None, :, :], (LEGEND_ROWS, width, 3))
    return np.concatenate([body, legend], axis=0)


def write_ppm(image: np.ndarray, path) -> None:
    """Write an (H, W, 3) uint8 image as binary PPM (P6)."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise InvalidInputError("expected an (H, W, 3) uint8 image")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())
