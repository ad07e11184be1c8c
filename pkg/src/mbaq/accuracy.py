"""Deterministic downstream-task accuracy oracles.

The primary oracle is a gradient-threshold blob detector scored with F1
against ground-truth boxes; a pixel-level edge-retention score over RoI
macroblocks is available as a cheap fallback.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError
from .frames import MB_SIZE, BoundingBox, Frame

# Sobel output is divided by 8 so the magnitude is in intensity units per pixel.
_SOBEL_NORM = 8.0


@dataclass(frozen=True)
class DetectorConfig:
    """Blob detector parameters."""

    grad_threshold: float = 24.0
    min_area: int = 64
    closing_radius: int = 1

    def __post_init__(self):
        if self.grad_threshold <= 0:
            raise InvalidInputError("grad_threshold must be positive")


class AccuracyOracle(Protocol):
    """Deterministic scorer; the score on an unmodified frame defines Acc_r."""

    def score(self, frame: Frame, gt_boxes) -> float: ...


def _gradient_magnitude(luma: np.ndarray) -> np.ndarray:
    f = luma.astype(np.float64)
    gx = ndimage.sobel(f, axis=1) / _SOBEL_NORM
    gy = ndimage.sobel(f, axis=0) / _SOBEL_NORM
    return np.hypot(gx, gy)


def _edge_mask(frame: Frame, threshold: float) -> np.ndarray:
    return _gradient_magnitude(frame.luma) >= threshold


def detect_blobs(frame: Frame, cfg: DetectorConfig = DetectorConfig()) -> list[BoundingBox]:
    """Detect high-gradient blobs and return their tight boxes sorted by (y, x).

    Pipeline: Sobel gradient magnitude, threshold, binary closing,
    8-connected components, minimum-area filter.
    """
    mask = _edge_mask(frame, cfg.grad_threshold)
    if cfg.closing_radius > 0:
        structure = ndimage.generate_binary_structure(2, 1)
        mask = ndimage.binary_closing(mask, structure=structure, iterations=cfg.closing_radius)
    labels, n_labels = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    if n_labels == 0:
        return []
    areas = np.bincount(labels.ravel())[1:]
    slices = ndimage.find_objects(labels)
    boxes = []
    for label_idx, sl in enumerate(slices):
        if sl is None or areas[label_idx] < cfg.min_area:
            continue
        ys, xs = sl
        boxes.append(
            BoundingBox(x=int(xs.start), y=int(ys.start), w=int(xs.stop - xs.start), h=int(ys.stop - ys.start))
        )
    boxes.sort(key=lambda b: (b.y, b.x))
    return boxes


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes."""
    ix = max(0, min(a.x2, b.x2) - max(a.x, b.x))
    iy = max(0, min(a.y2, b.y2) - max(a.y, b.y))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def detection_f1(pred, gt, iou_thresh: float = 0.5) -> float:
    """F1 of predicted vs ground-truth boxes under greedy IoU matching.

    Pairs are matched in descending IoU order, each box at most once; only
    pairs with IoU >= iou_thresh count as true positives. Both sets empty
    scores 1, exactly one empty scores 0.
    """
    if not 0.0 < iou_thresh < 1.0:
        raise InvalidInputError(f"iou_thresh {iou_thresh} outside (0, 1)")
    pred = list(pred)
    gt = list(gt)
    if not pred and not gt:
        return 1.0
    if not pred or not gt:
        return 0.0
    pairs = [
        (iou(p, g), i, j)
        for i, p in enumerate(pred)
        for j, g in enumerate(gt)
    ]
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_pred: set[int] = set()
    used_gt: set[int] = set()
    tp = 0
    for value, i, j in pairs:
        if value < iou_thresh:
            break
        if i in used_pred or j in used_gt:
            continue
        used_pred.add(i)
        used_gt.add(j)
        tp += 1
    precision = tp / len(pred)
    recall = tp / len(gt)
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def edge_retention_score(raw: Frame, recon: Frame, regions: np.ndarray,
                         cfg: DetectorConfig = DetectorConfig()) -> float:
    """Pixel F1 between raw and recon edge maps restricted to RoI macroblocks."""
    if raw.width != recon.width or raw.height != recon.height:
        raise InvalidInputError("frame dimension mismatch")
    roi = np.asarray(regions, dtype=bool)
    if not roi.any():
        return 1.0
    pixel_mask = np.repeat(np.repeat(roi, MB_SIZE, axis=0), MB_SIZE, axis=1)
    pixel_mask = pixel_mask[: raw.height, : raw.width]
    raw_edges = _edge_mask(raw, cfg.grad_threshold) & pixel_mask
    recon_edges = _edge_mask(recon, cfg.grad_threshold) & pixel_mask
    tp = int((raw_edges & recon_edges).sum())
    n_pred = int(recon_edges.sum())
    n_true = int(raw_edges.sum())
    if n_pred == 0 and n_true == 0:
        return 1.0
    if n_pred == 0 or n_true == 0:
        return 0.0
    precision = tp / n_pred
    recall = tp / n_true
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class DetectionOracle:
    """Accuracy oracle: blob-detection F1 against ground-truth boxes."""

    detector: DetectorConfig = DetectorConfig()
    iou_thresh: float = 0.5

    def score(self, frame: Frame, gt_boxes) -> float:
        return detection_f1(detect_blobs(frame, self.detector), gt_boxes, self.iou_thresh)


@dataclass(frozen=True, eq=False)
class EdgeRetentionOracle:
    """Fallback oracle: edge retention of a reference frame over RoI blocks.

    The reference edge map is computed once; scoring a candidate frame costs
    a single gradient pass, which keeps exhaustive searches tractable.
    """

    raw: Frame
    regions: np.ndarray
    detector: DetectorConfig = DetectorConfig()

    def __post_init__(self):
        roi = np.asarray(self.regions, dtype=bool)
        pixel_mask = np.repeat(np.repeat(roi, MB_SIZE, axis=0), MB_SIZE, axis=1)
        pixel_mask = pixel_mask[: self.raw.height, : self.raw.width]
        object.__setattr__(self, "_pixel_mask", pixel_mask)
        object.__setattr__(
            self, "_raw_edges", _edge_mask(self.raw, self.detector.grad_threshold) & pixel_mask
        )

    def score(self, frame: Frame, gt_boxes=()) -> float:
        if frame.width != self.raw.width or frame.height != self.raw.height:
            raise InvalidInputError("frame dimension mismatch")
        if not self._pixel_mask.any():
            return 1.0
        recon_edges = _edge_mask(frame, self.detector.grad_threshold) & self._pixel_mask
        tp = int((self._raw_edges & recon_edges).sum())
        n_pred = int(recon_edges.sum())
        n_true = int(self._raw_edges.sum())
        if n_pred == 0 and n_true == 0:
            return 1.0
        if n_pred == 0 or n_true == 0:
            return 0.0
        precision = tp / n_pred
        recall = tp / n_true
        if precision + recall == 0.0:
            return 0.0
        return 2.0 * precision * recall / (precision + recall)
