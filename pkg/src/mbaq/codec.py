"""Intra-only block-transform codec simulator with per-macroblock QP control.

Each 16x16 macroblock is coded as four 8x8 blocks: samples are centered by
-128, transformed with the orthonormal 2-D DCT-II, quantized by the step
derived from the macroblock's QP (round, ties away from zero), and costed
with a deterministic exp-Golomb-style run/level model. Reconstruction
dequantizes, inverse-transforms, and clamps back to [0, 255].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn

from .errors import InvalidInputError, ParseError
from .frames import MB_SIZE, Frame, partition, pad_to_macroblocks

# Emphasis level -> QP. Level 0 is the base (coarsest) quality.
DEFAULT_QP_TABLE = (45, 43, 37, 34, 30)
N_LEVELS = len(DEFAULT_QP_TABLE)

EOB_BITS = 2
BLOCK = 8


@dataclass(frozen=True)
class EncodeResult:
    """Reconstruction plus total and per-macroblock bit counts."""

    recon: Frame
    total_bits: int
    mb_bits: np.ndarray  # (n_rows, n_cols) int64


def emphasis_to_qp(level: int, qp_table=DEFAULT_QP_TABLE) -> int:
    """Map an emphasis level in {0..4} to its QP."""
    lv = int(level)
    if lv < 0 or lv >= len(qp_table):
        raise InvalidInputError(f"emphasis level {level} outside 0..{len(qp_table) - 1}")
    return int(qp_table[lv])


def apply_emphasis(em: np.ndarray, qp_table=DEFAULT_QP_TABLE) -> np.ndarray:
    """Elementwise emphasis_to_qp over an emphasis map."""
    levels = np.asarray(em)
    if levels.size == 0:
        raise InvalidInputError("empty emphasis map")
    if levels.min() < 0 or levels.max() >= len(qp_table):
        raise InvalidInputError("emphasis map entries outside 0..4")
    table = np.asarray(qp_table, dtype=np.int64)
    return table[levels.astype(np.int64)]


def qp_to_qstep(qp: int) -> float:
    """Quantizer step for a QP in [0, 51]; doubles every 6 QP."""
    q = float(qp)
    if q < 0 or q > 51:
        raise InvalidInputError(f"QP {qp} outside [0, 51]")
    return float(2.0 ** ((q - 4.0) / 6.0))


def dct8_forward(block: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT-II of an 8x8 block."""
    b = np.asarray(block, dtype=np.float64)
    if b.shape != (BLOCK, BLOCK):
        raise InvalidInputError(f"expected 8x8 block, got {b.shape}")
    return dctn(b, type=2, norm="ortho")


def dct8_inverse(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of dct8_forward."""
    c = np.asarray(coeffs, dtype=np.float64)
    if c.shape != (BLOCK, BLOCK):
        raise InvalidInputError(f"expected 8x8 coefficients, got {c.shape}")
    return idctn(c, type=2, norm="ortho")


def _zigzag_order(n: int = BLOCK) -> np.ndarray:
    # Anti-diagonal scan: even diagonals run bottom-left to top-right.
    order = []
    for s in range(2 * n - 1):
        coords = [(i, s - i) for i in range(max(0, s - n + 1), min(s, n - 1) + 1)]
        if s % 2 == 0:
            coords.reverse()
        order.extend(i * n + j for i, j in coords)
    return np.asarray(order, dtype=np.intp)


ZIGZAG = _zigzag_order()


def _ue_bits(values: np.ndarray) -> np.ndarray:
    # Unsigned exp-Golomb length: 2*floor(log2(k+1)) + 1, exact for k < 2**52.
    v = np.asarray(values, dtype=np.float64) + 1.0
    exponents = np.frexp(v)[1] - 1
    return 2 * exponents.astype(np.int64) + 1


def _bits_for_scans(scans: np.ndarray) -> np.ndarray:
    """Bit costs for zigzag-ordered integer coefficient rows, shape (n, 64)."""
    mag = np.abs(scans.astype(np.int64))
    nz = mag > 0
    n, width = mag.shape
    idx = np.arange(width, dtype=np.int64)
    marked = np.where(nz, idx, -1)
    last = np.maximum.accumulate(marked, axis=1)
    prev = np.concatenate([np.full((n, 1), -1, dtype=np.int64), last[:, :-1]], axis=1)
    runs = idx - prev - 1
    costs = np.where(nz, _ue_bits(runs) + _ue_bits(mag) + 1, 0)
    return costs.sum(axis=1) + EOB_BITS


def estimate_bits(qcoeffs: np.ndarray) -> int:
    """Deterministic bit cost of one quantized 8x8 block.

    Coefficients are scanned in zigzag order; each nonzero level L after a
    run of z zeros costs ue(z) + ue(|L|) + 1 sign bit, with ue(k) =
    2*floor(log2(k+1)) + 1, plus a 2-bit end-of-block marker.
    """
    q = np.asarray(qcoeffs)
    if q.shape != (BLOCK, BLOCK):
        raise InvalidInputError(f"expected 8x8 coefficients, got {q.shape}")
    scan = q.reshape(1, -1)[:, ZIGZAG]
    return int(_bits_for_scans(scan)[0])


def _quantize(coeffs: np.ndarray, qstep: np.ndarray) -> np.ndarray:
    # Round with ties away from zero.
    scaled = coeffs / qstep
    return (np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)).astype(np.int64)


def encode_frame(frame: Frame, qp_map: np.ndarray) -> EncodeResult:
    """Encode a frame under a per-macroblock QP map.

    The QP map shape must match the frame's macroblock grid. Per-MB bits sum
    the four 8x8 block costs; reconstruction is cropped back to the original
    frame extent.
    """
    grid = partition(frame)
    qp = np.asarray(qp_map)
    if qp.shape != grid.shape:
        raise InvalidInputError(f"QP map shape {qp.shape} does not match grid {grid.shape}")
    if qp.min() < 0 or qp.max() > 51:
        raise InvalidInputError("QP map entries outside [0, 51]")

    padded = pad_to_macroblocks(frame).astype(np.float64)
    h16, w16 = padded.shape
    rows8, cols8 = h16 // BLOCK, w16 // BLOCK

    blocks = padded.reshape(rows8, BLOCK, cols8, BLOCK).transpose(0, 2, 1, 3) - 128.0
    coeffs = dctn(blocks, type=2, norm="ortho", axes=(-2, -1))

    qstep_mb = np.array([[qp_to_qstep(v) for v in row] for row in qp], dtype=np.float64)
    qstep_blocks = np.repeat(np.repeat(qstep_mb, 2, axis=0), 2, axis=1)[..., None, None]

    quant = _quantize(coeffs, qstep_blocks)
    scans = quant.reshape(-1, BLOCK * BLOCK)[:, ZIGZAG]
    block_bits = _bits_for_scans(scans).reshape(rows8, cols8)
    mb_bits = block_bits.reshape(grid.n_rows, 2, grid.n_cols, 2).sum(axis=(1, 3))

    recon_blocks = idctn(quant * qstep_blocks, type=2, norm="ortho", axes=(-2, -1)) + 128.0
    recon = recon_blocks.transpose(0, 2, 1, 3).reshape(h16, w16)
    recon = np.clip(np.rint(recon), 0, 255).astype(np.uint8)
    recon = recon[: frame.height, : frame.width]

    return EncodeResult(
        recon=Frame(recon),
        total_bits=int(mb_bits.sum()),
        mb_bits=mb_bits.astype(np.int64),
    )


def uniform_qp_map(grid_shape: tuple[int, int], qp: int) -> np.ndarray:
    """Constant QP map of the given grid shape."""
    if qp < 0 or qp > 51:
        raise InvalidInputError(f"QP {qp} outside [0, 51]")
    return np.full(grid_shape, int(qp), dtype=np.int64)


def write_qp_matrix(qp_maps, path) -> None:
    """Write per-frame QP maps: line k holds frame k's QPs, row-major."""
    maps = [np.asarray(m) for m in qp_maps]
    if maps:
        shape = maps[0].shape
        if any(m.shape != shape for m in maps):
            raise InvalidInputError("all QP maps must share one shape")
    with open(path, "w", encoding="ascii") as fh:
        for m in maps:
            fh.write(" ".join(str(int(v)) for v in m.ravel()) + "\n")


def read_qp_matrix(path, n_rows: int, n_cols: int) -> list[np.ndarray]:
    """Read a QP-matrix file back into per-frame (n_rows, n_cols) maps."""
    expected = n_rows * n_cols
    maps = []
    with open(path, "r", encoding="ascii") as fh:
        for k, line in enumerate(fh):
            if not line.strip():
                continue
            tokens = line.split()
            if len(tokens) != expected:
                raise ParseError(
                    f"{path}: frame {k}: expected {expected} QP values, got {len(tokens)}"
                )
            try:
                values = np.array([int(t) for t in tokens], dtype=np.int64)
            except ValueError as exc:
                raise ParseError(f"{path}: frame {k}: non-integer QP value") from exc
            if values.min() < 0 or values.max() > 51:
                raise ParseError(f"{path}: frame {k}: QP value outside [0, 51]")
            maps.append(values.reshape(n_rows, n_cols))
    return maps


def emphasis_map_to_json(em: np.ndarray) -> dict:
    """Serializable form of an emphasis map: {rows, cols, levels}."""
    levels = np.asarray(em)
    return {
        "rows": int(levels.shape[0]),
        "cols": int(levels.shape[1]),
        "levels": [int(v) for v in levels.ravel()],
    }


def emphasis_map_from_json(obj: dict) -> np.ndarray:
    """Inverse of emphasis_map_to_json, with range validation."""
    try:
        rows, cols = int(obj["rows"]), int(obj["cols"])
        flat = np.array([int(v) for v in obj["levels"]], dtype=np.int64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed emphasis map JSON: {exc}") from exc
    if flat.size != rows * cols:
        raise ParseError(f"emphasis map JSON has {flat.size} levels, expected {rows * cols}")
    if flat.size and (flat.min() < 0 or flat.max() >= N_LEVELS):
        raise ParseError("emphasis map JSON levels outside 0..4")
    return flat.reshape(rows, cols)


def qp_map_to_json(qp_map: np.ndarray) -> dict:
    """Serializable form of a QP map: {rows, cols, qp}."""
    qp = np.asarray(qp_map)
    return {
        "rows": int(qp.shape[0]),
        "cols": int(qp.shape[1]),
        "qp": [int(v) for v in qp.ravel()],
    }


def qp_map_from_json(obj: dict) -> np.ndarray:
    """Inverse of qp_map_to_json, with range validation."""
    try:
        rows, cols = int(obj["rows"]), int(obj["cols"])
        flat = np.array([int(v) for v in obj["qp"]], dtype=np.int64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed QP map JSON: {exc}") from exc
    if flat.size != rows * cols:
        raise ParseError(f"QP map JSON has {flat.size} entries, expected {rows * cols}")
    if flat.size and (flat.min() < 0 or flat.max() > 51):
        raise ParseError("QP map JSON entries outside [0, 51]")
    return flat.reshape(rows, cols)
