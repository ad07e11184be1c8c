"""Frames, macroblock geometry, synthetic scenes, and RoI/BG region labels.

A frame is a single-channel 8-bit luma plane. All codec and quality
operations work on 16x16 macroblocks; frames whose dimensions are not
multiples of 16 are padded by edge replication before any block math.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidConfigError, InvalidInputError, ParseError, PlacementError

MB_SIZE = 16


@dataclass(frozen=True, eq=False)
class Frame:
    """Single-channel 8-bit image, stored as a (height, width) uint8 array."""

    luma: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.luma)
        if a.ndim != 2:
            raise InvalidInputError(f"frame must be 2-D, got shape {a.shape}")
        if a.shape[0] == 0 or a.shape[1] == 0:
            raise InvalidInputError(f"degenerate frame dimensions {a.shape}")
        if not np.issubdtype(a.dtype, np.integer) and not np.issubdtype(a.dtype, np.floating):
            raise InvalidInputError(f"unsupported luma dtype {a.dtype}")
        if a.min() < 0 or a.max() > 255:
            raise InvalidInputError("luma samples must lie in [0, 255]")
        object.__setattr__(self, "luma", np.ascontiguousarray(a, dtype=np.uint8))

    @property
    def width(self) -> int:
        return self.luma.shape[1]

    @property
    def height(self) -> int:
        return self.luma.shape[0]


@dataclass(frozen=True)
class MbGrid:
    """Macroblock grid geometry of a frame."""

    n_rows: int
    n_cols: int
    mb_size: int = MB_SIZE

    @property
    def n_macroblocks(self) -> int:
        return self.n_rows * self.n_cols

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box with top-left corner (x, y) and extents (w, h)."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise InvalidInputError(f"box extents must be positive, got {self.w}x{self.h}")

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    def intersects(self, other: "BoundingBox") -> bool:
        return self.x < other.x2 and other.x < self.x2 and self.y < other.y2 and other.y < self.y2

    def inflate(self, pad: int) -> "BoundingBox":
        return BoundingBox(self.x - pad, self.y - pad, self.w + 2 * pad, self.h + 2 * pad)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundingBox":
        return cls(int(d["x"]), int(d["y"]), int(d["w"]), int(d["h"]))


@dataclass(frozen=True, eq=False)
class Scene:
    """A generated frame plus its ground-truth object boxes."""

    frame: Frame
    gt_boxes: tuple[BoundingBox, ...]
    seed: int


@dataclass(frozen=True)
class SceneConfig:
    """Parameters of the synthetic scene generator.

    Frames are a smooth sinusoidal background plus a mid-frequency detail
    wave and Gaussian noise; objects are rectangles carrying a fine diagonal
    stripe texture at a small mean contrast. The stripe frequency is chosen
    so detection survives moderate quantization but not the coarsest levels.
    Objects never overlap and keep `min_separation` pixels between inflated
    footprints.
    """

    width: int = 256
    height: int = 256
    min_objects: int = 3
    max_objects: int = 5
    min_object_size: int = 12
    max_object_size: int = 16
    contrast: float = 70.0
    texture_amplitude: float = 8.0
    texture_period: float = 3.0
    background_amplitude: float = 6.0
    detail_amplitude: float = 10.0
    detail_period: float = 16.0
    noise_sigma: float = 2.0
    base_level: float = 110.0
    margin: int = 16
    min_separation: int = 16
    placement_attempts: int = 100
    jitter_px: int = 1

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidConfigError("frame dimensions must be positive")
        if self.min_objects < 0 or self.max_objects < self.min_objects:
            raise InvalidConfigError("invalid object count range")
        if self.min_object_size <= 0 or self.max_object_size < self.min_object_size:
            raise InvalidConfigError("invalid object size range")
        if self.texture_period <= 0 or self.detail_period <= 0:
            raise InvalidConfigError("texture periods must be positive")


def partition(frame: Frame) -> MbGrid:
    """Macroblock grid of a frame: ceil(height/16) rows by ceil(width/16) cols."""
    return MbGrid(
        n_rows=math.ceil(frame.height / MB_SIZE),
        n_cols=math.ceil(frame.width / MB_SIZE),
    )


def pad_to_macroblocks(frame: Frame) -> np.ndarray:
    """Pad the luma plane by edge replication up to multiples of 16.

    Samples inside the original extent are never altered.
    """
    grid = partition(frame)
    pad_rows = grid.n_rows * MB_SIZE - frame.height
    pad_cols = grid.n_cols * MB_SIZE - frame.width
    if pad_rows == 0 and pad_cols == 0:
        return frame.luma.copy()
    return np.pad(frame.luma, ((0, pad_rows), (0, pad_cols)), mode="edge")


def classify_regions(grid: MbGrid, boxes) -> np.ndarray:
    """Label each macroblock RoI (True) iff its footprint intersects any box.

    Returns a boolean (n_rows, n_cols) array; False entries are background.
    """
    regions = np.zeros(grid.shape, dtype=bool)
    max_x = grid.n_cols * grid.mb_size
    max_y = grid.n_rows * grid.mb_size
    for box in boxes:
        if box.x < 0 or box.y < 0 or box.x2 > max_x or box.y2 > max_y:
            raise InvalidInputError(f"box {box} lies outside the frame extent")
        r0 = box.y // grid.mb_size
        r1 = (box.y2 - 1) // grid.mb_size
        c0 = box.x // grid.mb_size
        c1 = (box.x2 - 1) // grid.mb_size
        regions[r0 : r1 + 1, c0 : c1 + 1] = True
    return regions


@dataclass(frozen=True)
class _ObjectSpec:
    # Placement plus appearance; jittered sequences move the box but keep the look.
    box: BoundingBox
    polarity: int
    direction: int
    phase: float


def _background(rng: np.random.Generator, cfg: SceneConfig) -> np.ndarray:
    yy, xx = np.mgrid[0 : cfg.height, 0 : cfg.width].astype(np.float64)
    bg = np.full((cfg.height, cfg.width), cfg.base_level, dtype=np.float64)
    for k in range(2):
        fx = rng.uniform(1.0, 3.0)
        fy = rng.uniform(1.0, 3.0)
        phx = rng.uniform(0.0, 2.0 * np.pi)
        phy = rng.uniform(0.0, 2.0 * np.pi)
        amp = cfg.background_amplitude / (k + 1)
        bg += amp * np.sin(2.0 * np.pi * fx * xx / cfg.width + phx) * np.sin(
            2.0 * np.pi * fy * yy / cfg.height + phy
        )
    # Mid-frequency plane wave: visible structure that coarse QPs flatten.
    theta = rng.uniform(0.0, np.pi)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    axis = xx * np.cos(theta) + yy * np.sin(theta)
    bg += cfg.detail_amplitude * np.sin(2.0 * np.pi * axis / cfg.detail_period + phase)
    return bg


def _place_objects(rng: np.random.Generator, cfg: SceneConfig) -> list[_ObjectSpec]:
    count = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    specs: list[_ObjectSpec] = []
    for i in range(count):
        placed = None
        for _ in range(cfg.placement_attempts):
            bw = int(rng.integers(cfg.min_object_size, cfg.max_object_size + 1))
            bh = int(rng.integers(cfg.min_object_size, cfg.max_object_size + 1))
            x_hi = cfg.width - cfg.margin - bw
            y_hi = cfg.height - cfg.margin - bh
            if x_hi < cfg.margin or y_hi < cfg.margin:
                continue
            x = int(rng.integers(cfg.margin, x_hi + 1))
            y = int(rng.integers(cfg.margin, y_hi + 1))
            candidate = BoundingBox(x, y, bw, bh)
            inflated = candidate.inflate(cfg.min_separation)
            if not any(inflated.intersects(s.box) for s in specs):
                placed = candidate
                break
        if placed is None:
            raise PlacementError(
                f"object {i}: no non-overlapping position after {cfg.placement_attempts} attempts"
            )
        specs.append(
            _ObjectSpec(
                box=placed,
                polarity=1 if i % 2 == 0 else -1,
                direction=1 if i % 2 == 0 else -1,
                phase=float(rng.uniform(0.0, 2.0 * np.pi)),
            )
        )
    return specs


def _render(bg: np.ndarray, specs, noise: np.ndarray, cfg: SceneConfig) -> Frame:
    img = bg.copy()
    for spec in specs:
        b = spec.box
        yy, xx = np.mgrid[0 : b.h, 0 : b.w].astype(np.float64)
        stripes = cfg.texture_amplitude * np.sin(
            2.0 * np.pi * (xx + spec.direction * yy) / cfg.texture_period + spec.phase
        )
        img[b.y : b.y2, b.x : b.x2] = cfg.base_level + spec.polarity * cfg.contrast + stripes
    img += noise
    return Frame(np.clip(np.rint(img), 0, 255).astype(np.uint8))


def generate_scene(seed: int, cfg: SceneConfig) -> Scene:
    """Deterministically generate a scene from (seed, cfg)."""
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF])
    bg = _background(rng, cfg)
    specs = _place_objects(rng, cfg)
    noise = rng.normal(0.0, cfg.noise_sigma, size=(cfg.height, cfg.width))
    frame = _render(bg, specs, noise, cfg)
    return Scene(frame=frame, gt_boxes=tuple(s.box for s in specs), seed=seed)


def generate_sequence(seed: int, cfg: SceneConfig, n_frames: int) -> list[Scene]:
    """Generate a short sequence: frame 0 plus jittered follow-up frames.

    Object positions drift by at most `jitter_px` per frame (rejected moves
    keep the previous position); appearance and background stay fixed, noise
    is redrawn per frame. Every frame is a pure function of (seed, cfg, t).
    """
    if n_frames < 1:
        raise InvalidConfigError("n_frames must be >= 1")
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF])
    bg = _background(rng, cfg)
    specs = _place_objects(rng, cfg)
    noise0 = rng.normal(0.0, cfg.noise_sigma, size=(cfg.height, cfg.width))
    scenes = [Scene(frame=_render(bg, specs, noise0, cfg), gt_boxes=tuple(s.box for s in specs), seed=seed)]
    for t in range(1, n_frames):
        rng_t = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 7919, t])
        moved: list[_ObjectSpec] = []
        for spec in specs:
            dx = int(rng_t.integers(-cfg.jitter_px, cfg.jitter_px + 1))
            dy = int(rng_t.integers(-cfg.jitter_px, cfg.jitter_px + 1))
            b = spec.box
            candidate = BoundingBox(b.x + dx, b.y + dy, b.w, b.h)
            ok = (
                cfg.margin <= candidate.x
                and cfg.margin <= candidate.y
                and candidate.x2 <= cfg.width - cfg.margin
                and candidate.y2 <= cfg.height - cfg.margin
                and not any(candidate.inflate(cfg.min_separation).intersects(m.box) for m in moved)
            )
            moved.append(replace(spec, box=candidate) if ok else spec)
        noise_t = rng_t.normal(0.0, cfg.noise_sigma, size=(cfg.height, cfg.width))
        scenes.append(
            Scene(frame=_render(bg, moved, noise_t, cfg), gt_boxes=tuple(s.box for s in moved), seed=seed)
        )
        specs = moved
    return scenes


def write_pgm(frame: Frame, path) -> None:
    """Write a frame as binary 8-bit PGM (P5)."""
    with open(path, "wb") as fh:
        fh.write(f"P5\n{frame.width} {frame.height}\n255\n".encode("ascii"))
        fh.write(frame.luma.tobytes())


def read_pgm(path) -> Frame:
    """Read a binary 8-bit PGM (P5) file."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ParseError(f"{path}: not a binary PGM (P5) file")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise ParseError(f"{path}: malformed PGM header token {token!r}")
        fields.append(int(token))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise ParseError(f"{path}: only maxval 255 is supported, got {maxval}")
    expected = width * height
    raster = data[pos : pos + expected]
    if len(raster) != expected:
        raise ParseError(f"{path}: expected {expected} raster bytes, got {len(raster)}")
    return Frame(np.frombuffer(raster, dtype=np.uint8).reshape(height, width))
