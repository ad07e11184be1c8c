"""Self-supervised training of the per-macroblock emphasis model.

The model predicts one of five emphasis levels per macroblock. Training
builds per-macroblock proxy targets by region-aware exploration: RoI blocks
whose low-quality SSIM falls at or below the RoI threshold are sampled
toward higher emphasis, background blocks at or above the BG threshold are
sampled toward lower emphasis, and remaining background blocks receive a
steady one-level downward pressure. A penalty-weighted cross-entropy on
those targets drives the gradient; the accuracy gap between compressed and
raw frames is logged and used for stopping but carries no gradient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .accuracy import AccuracyOracle
from .codec import N_LEVELS, apply_emphasis, encode_frame
from .errors import InvalidConfigError, InvalidInputError, TrainingError
from .frames import Frame, MbGrid, Scene, classify_regions, partition
from .quality import per_mb_ssim
from .thresholds import EmphasisThresholds, lowest_quality_encode, proxy_emphasis_threshold

FEATURE_DIM = 6
MAX_LEVEL = N_LEVELS - 1

EPOCH_LOG_COLUMNS = ("epoch", "loss", "loss1", "loss2", "acc_c", "acc_r", "p", "mean_emphasis")


@dataclass(frozen=True)
class TrainerConfig:
    """Training hyperparameters; defaults follow the reference setup."""

    p0: float = 0.8
    p_decay: float = 0.1
    lambda1: float = 10.0
    lambda2: float = 5.0
    penalty: tuple = (1.0, 1.3, 1.6, 1.9, 2.2)
    # The cosine schedule shape follows the reference setup; the peak rate is
    # scaled up for the plain-SGD linear model (the 1e-3 default presumes an
    # adaptive optimizer on a deep backbone).
    lr_max: float = 0.25
    lr_min: float = 2.5e-4
    tau: float = 0.02
    max_epochs: int = 30
    sampler_decay: float = 0.5
    seed: int = 0
    # Start at maximum emphasis and let the background decay toward zero;
    # region routing then protects RoI blocks from the downward pressure.
    init_level: int = 4
    pct_roi: float = 0.9
    pct_bg: float = 0.5
    region_routing: bool = True
    scale_grad_by_acc_gap: bool = False

    def __post_init__(self):
        if not 0.0 <= self.p0 <= 1.0:
            raise InvalidConfigError("p0 must lie in [0, 1]")
        if self.tau < 0.0:
            raise InvalidConfigError("tau must be non-negative")
        if len(self.penalty) != N_LEVELS or any(
            b <= a for a, b in zip(self.penalty, self.penalty[1:])
        ):
            raise InvalidConfigError("penalty must be strictly increasing with 5 entries")
        if not 0.0 < self.sampler_decay < 1.0:
            raise InvalidConfigError("sampler_decay must lie in (0, 1)")
        if not 0 <= self.init_level <= MAX_LEVEL:
            raise InvalidConfigError("init_level outside 0..4")


def extract_features(frame: Frame, mb_ssim_low: np.ndarray) -> np.ndarray:
    """Per-macroblock feature grid, shape (n_rows, n_cols, 6).

    Features: mean/255, variance/255^2, gradient energy (mean absolute
    horizontal plus vertical difference, /255), low-quality SSIM, and the
    normalized row/col position.
    """
    grid = partition(frame)
    ssim_low = np.asarray(mb_ssim_low, dtype=np.float64)
    if ssim_low.shape != grid.shape:
        raise InvalidInputError(f"SSIM grid shape {ssim_low.shape} does not match {grid.shape}")
    from .frames import MB_SIZE, pad_to_macroblocks

    padded = pad_to_macroblocks(frame).astype(np.float64)
    blocks = padded.reshape(grid.n_rows, MB_SIZE, grid.n_cols, MB_SIZE).transpose(0, 2, 1, 3)
    mean = blocks.mean(axis=(-2, -1))
    var = (blocks * blocks).mean(axis=(-2, -1)) - mean * mean
    grad = (
        np.abs(np.diff(blocks, axis=-1)).mean(axis=(-2, -1))
        + np.abs(np.diff(blocks, axis=-2)).mean(axis=(-2, -1))
    )
    rows = np.arange(grid.n_rows, dtype=np.float64) / max(grid.n_rows - 1, 1)
    cols = np.arange(grid.n_cols, dtype=np.float64) / max(grid.n_cols - 1, 1)
    row_pos, col_pos = np.meshgrid(rows, cols, indexing="ij")
    feats = np.stack(
        [mean / 255.0, var / 255.0**2, grad / 255.0, ssim_low, row_pos, col_pos],
        axis=-1,
    )
    return feats


class EmphasisModel:
    """Interface: per-MB level distributions plus a logit-gradient update."""

    def predict(self, features: np.ndarray) -> np.ndarray:  # (M, 6) -> (M, 5)
        raise NotImplementedError

    def apply_gradient(self, logit_grads: np.ndarray, lr: float) -> None:
        raise NotImplementedError


class LinearEmphasisModel(EmphasisModel):
    """Multinomial logistic regression over the six macroblock features.

    `apply_gradient` consumes the features cached by the most recent
    `predict` call, so each update must follow its own forward pass.
    """

    def __init__(self, weights=None, bias=None, feature_mean=None, feature_std=None):
        self.weights = (
            np.zeros((N_LEVELS, FEATURE_DIM)) if weights is None else np.asarray(weights, dtype=np.float64)
        )
        self.bias = np.zeros(N_LEVELS) if bias is None else np.asarray(bias, dtype=np.float64)
        self.feature_mean = (
            np.zeros(FEATURE_DIM) if feature_mean is None else np.asarray(feature_mean, dtype=np.float64)
        )
        self.feature_std = (
            np.ones(FEATURE_DIM) if feature_std is None else np.asarray(feature_std, dtype=np.float64)
        )
        if self.weights.shape != (N_LEVELS, FEATURE_DIM) or self.bias.shape != (N_LEVELS,):
            raise InvalidInputError("model parameter shapes must be (5, 6) and (5,)")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise InvalidInputError("model parameters must be finite")
        self._last_features: np.ndarray | None = None

    @classmethod
    def initial(cls, init_level: int = 0) -> "LinearEmphasisModel":
        model = cls()
        model.bias[int(init_level)] = 1.0
        return model

    def set_normalization(self, mean: np.ndarray, std: np.ndarray) -> None:
        self.feature_mean = np.asarray(mean, dtype=np.float64).copy()
        self.feature_std = np.maximum(np.asarray(std, dtype=np.float64), 1e-6)

    def predict(self, features: np.ndarray) -> np.ndarray:
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != FEATURE_DIM:
            raise InvalidInputError(f"features must be (M, {FEATURE_DIM}), got {feats.shape}")
        std = (feats - self.feature_mean) / self.feature_std
        logits = std @ self.weights.T + self.bias
        logits -= logits.max(axis=1, keepdims=True)
        exp = np.exp(logits)
        probs = exp / exp.sum(axis=1, keepdims=True)
        self._last_features = std
        return probs

    def apply_gradient(self, logit_grads: np.ndarray, lr: float) -> None:
        if self._last_features is None:
            raise InvalidInputError("apply_gradient called before predict")
        grads = np.asarray(logit_grads, dtype=np.float64)
        if grads.shape != (self._last_features.shape[0], N_LEVELS):
            raise InvalidInputError(f"gradient shape {grads.shape} does not match last predict")
        self.weights -= lr * (grads.T @ self._last_features)
        self.bias -= lr * grads.sum(axis=0)

    def to_json(self) -> dict:
        return {
            "weights": [[float(v) for v in row] for row in self.weights],
            "bias": [float(v) for v in self.bias],
            "feature_mean": [float(v) for v in self.feature_mean],
            "feature_std": [float(v) for v in self.feature_std],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LinearEmphasisModel":
        return cls(
            weights=obj["weights"],
            bias=obj["bias"],
            feature_mean=obj.get("feature_mean"),
            feature_std=obj.get("feature_std"),
        )


def _sample_step(n_steps: int, decay: float, u: float) -> int:
    # Inverse-CDF draw of k in {1..n} with P(k) proportional to decay**(k-1).
    weights = decay ** np.arange(n_steps, dtype=np.float64)
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    return int(np.searchsorted(cdf, u, side="right")) + 1


def exponential_sample(anchor: int, bound: int, r: float, rng: np.random.Generator) -> int:
    """Sample a level strictly between anchor (exclusive) and bound (inclusive).

    Steps of size k toward the bound carry weight r**(k-1); anchor == bound
    returns the anchor unchanged.
    """
    if not 0.0 < r < 1.0:
        raise InvalidConfigError(f"sampler decay {r} outside (0, 1)")
    a, b = int(anchor), int(bound)
    if not (0 <= a <= MAX_LEVEL and 0 <= b <= MAX_LEVEL):
        raise InvalidInputError("levels must lie in 0..4")
    if a == b:
        return a
    step = _sample_step(abs(b - a), r, float(rng.random()))
    return a + step * (1 if b > a else -1)


def build_proxy_target(
    em: np.ndarray,
    regions: np.ndarray,
    mb_ssim_low: np.ndarray,
    thr: EmphasisThresholds,
    p: float,
    rng: np.random.Generator,
    sampler_decay: float = 0.5,
    region_routing: bool = True,
) -> np.ndarray:
    """Per-macroblock proxy emphasis targets for one training pass.

    RoI blocks: with probability p, and only when their low-quality SSIM is
    at or below the RoI threshold, sample upward toward the top level;
    otherwise keep the prediction. Background blocks: with probability p,
    and only when their SSIM is at or above the BG threshold, sample
    downward toward level 0; otherwise decrement the prediction (floor 0).
    With `region_routing` disabled every block gets the plain decrement.
    """
    levels = np.asarray(em, dtype=np.int64)
    roi = np.asarray(regions, dtype=bool)
    ssim_low = np.asarray(mb_ssim_low, dtype=np.float64)
    if levels.shape != roi.shape or levels.shape != ssim_low.shape:
        raise InvalidInputError("emphasis map, regions, and SSIM grid must share a shape")
    if levels.size and (levels.min() < 0 or levels.max() > MAX_LEVEL):
        raise InvalidInputError("emphasis map entries outside 0..4")
    if not 0.0 <= p <= 1.0:
        raise InvalidInputError(f"exploration probability {p} outside [0, 1]")
    if not 0.0 < sampler_decay < 1.0:
        raise InvalidConfigError(f"sampler decay {sampler_decay} outside (0, 1)")

    flat = levels.ravel()
    roi_flat = roi.ravel()
    ssim_flat = ssim_low.ravel()
    gate = rng.random(flat.size)
    draw = rng.random(flat.size)

    proxy = np.maximum(flat - 1, 0)  # background default: downward pressure
    if region_routing:
        proxy = np.where(roi_flat, flat, proxy)
        explore_up = roi_flat & (gate < p) & (ssim_flat <= thr.t_roi) & (flat < MAX_LEVEL)
        explore_down = ~roi_flat & (gate < p) & (ssim_flat >= thr.t_bg) & (flat > 0)
        for m in np.flatnonzero(explore_up):
            proxy[m] = flat[m] + _sample_step(MAX_LEVEL - flat[m], sampler_decay, draw[m])
        for m in np.flatnonzero(explore_down):
            proxy[m] = flat[m] - _sample_step(flat[m], sampler_decay, draw[m])
    return np.clip(proxy, 0, MAX_LEVEL).reshape(levels.shape)


def alignment_loss(
    pred: np.ndarray,
    proxy: np.ndarray,
    acc_c: float,
    acc_r: float,
    cfg: TrainerConfig,
) -> tuple[float, np.ndarray]:
    """Combined loss and per-MB logit gradients.

    loss = lambda1 * |acc_c - acc_r| + lambda2 * mean_m penalty[proxy_m] *
    (-log pred_m[proxy_m]). The accuracy term is piecewise constant in the
    model parameters and contributes no gradient; the optional
    `scale_grad_by_acc_gap` mode multiplies the alignment gradient by
    (1 + |acc_c - acc_r|).
    """
    probs = np.asarray(pred, dtype=np.float64)
    targets = np.asarray(proxy, dtype=np.int64).ravel()
    if probs.ndim != 2 or probs.shape[0] != targets.size or probs.shape[1] != N_LEVELS:
        raise InvalidInputError("prediction and proxy shapes are inconsistent")
    if targets.size and (targets.min() < 0 or targets.max() > MAX_LEVEL):
        raise InvalidInputError("proxy targets outside 0..4")
    m = targets.size
    pen = np.asarray(cfg.penalty, dtype=np.float64)[targets]
    picked = probs[np.arange(m), targets]
    loss2 = float(np.mean(pen * -np.log(picked)))
    loss1 = abs(float(acc_c) - float(acc_r))
    loss = cfg.lambda1 * loss1 + cfg.lambda2 * loss2

    onehot = np.zeros_like(probs)
    onehot[np.arange(m), targets] = 1.0
    grads = cfg.lambda2 * pen[:, None] * (probs - onehot) / m
    if cfg.scale_grad_by_acc_gap:
        grads = grads * (1.0 + loss1)
    return loss, grads


@dataclass(frozen=True, eq=False)
class SceneContext:
    """Cached per-scene quantities used by training and evaluation."""

    scene: Scene
    grid: MbGrid
    regions: np.ndarray
    ssim_low: np.ndarray
    features: np.ndarray  # (M, 6)
    thresholds: EmphasisThresholds
    acc_r: float


def prepare_scene(
    scene: Scene,
    oracle: AccuracyOracle,
    pct_roi: float = 0.9,
    pct_bg: float = 0.5,
    thresholds: EmphasisThresholds | None = None,
) -> SceneContext:
    """Compute the low-quality SSIM grid, thresholds, features, and Acc_r."""
    grid = partition(scene.frame)
    low = lowest_quality_encode(scene.frame)
    ssim_low = per_mb_ssim(scene.frame, low)
    thr = thresholds or proxy_emphasis_threshold(scene.frame, low, pct_roi, pct_bg)
    feats = extract_features(scene.frame, ssim_low).reshape(-1, FEATURE_DIM)
    regions = classify_regions(grid, scene.gt_boxes)
    acc_r = float(oracle.score(scene.frame, scene.gt_boxes))
    return SceneContext(
        scene=scene,
        grid=grid,
        regions=regions,
        ssim_low=ssim_low,
        features=feats,
        thresholds=thr,
        acc_r=acc_r,
    )


def predict_emphasis(model: EmphasisModel, ctx: SceneContext) -> np.ndarray:
    """Argmax emphasis map of the model on a prepared scene."""
    probs = model.predict(ctx.features)
    return np.argmax(probs, axis=1).reshape(ctx.grid.shape)


def _cosine_lr(epoch: int, cfg: TrainerConfig) -> float:
    span = max(cfg.max_epochs - 1, 1)
    t = min(epoch, span)
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * t / span))


def _frame_gap_and_sum(model, ctx, oracle) -> tuple[float, int]:
    em = predict_emphasis(model, ctx)
    result = encode_frame(ctx.scene.frame, apply_emphasis(em))
    acc_c = float(oracle.score(result.recon, ctx.scene.gt_boxes))
    return abs(acc_c - ctx.acc_r), int(em.sum())


def train(
    corpus,
    oracle: AccuracyOracle,
    cfg: TrainerConfig,
    val_corpus=None,
    model: LinearEmphasisModel | None = None,
    frozen_proxies=None,
) -> tuple[LinearEmphasisModel, list[dict]]:
    """Train the emphasis model over a corpus of scenes.

    Per epoch and frame: predict, build the proxy target at the current
    exploration probability, encode under the predicted map, score accuracy,
    and apply the alignment gradient at the cosine-scheduled learning rate.
    The exploration probability decays by `p_decay` per epoch. Training
    stops once the validation accuracy gap stays within tau for two
    consecutive epochs while the validation mean emphasis sum has stopped
    decreasing (relative drop below 1%), or at `max_epochs`.

    `corpus` may hold Scene or SceneContext entries; `frozen_proxies`, when
    given, fixes one proxy target grid per frame and disables exploration
    (used for convergence diagnostics). Returns the model and per-epoch log.
    """
    if cfg.max_epochs <= 0:
        raise InvalidConfigError("max_epochs = 0: no training performed")
    contexts = [
        c if isinstance(c, SceneContext) else prepare_scene(c, oracle, cfg.pct_roi, cfg.pct_bg)
        for c in corpus
    ]
    if not contexts:
        raise InvalidInputError("empty training corpus")
    val_contexts = (
        [
            c if isinstance(c, SceneContext) else prepare_scene(c, oracle, cfg.pct_roi, cfg.pct_bg)
            for c in val_corpus
        ]
        if val_corpus
        else contexts
    )
    if frozen_proxies is not None and len(frozen_proxies) != len(contexts):
        raise InvalidInputError("frozen_proxies must match the corpus length")

    if model is None:
        model = LinearEmphasisModel.initial(cfg.init_level)
        all_feats = np.concatenate([ctx.features for ctx in contexts], axis=0)
        model.set_normalization(all_feats.mean(axis=0), all_feats.std(axis=0))

    log: list[dict] = []
    acc_ok_streak = 0
    prev_val_sum: float | None = None
    for epoch in range(cfg.max_epochs):
        p = max(cfg.p0 - epoch * cfg.p_decay, 0.0)
        lr = _cosine_lr(epoch, cfg)
        stats = {k: 0.0 for k in ("loss", "loss1", "loss2", "acc_c", "acc_r", "mean_emphasis")}
        for i, ctx in enumerate(contexts):
            probs = model.predict(ctx.features)
            em = np.argmax(probs, axis=1).reshape(ctx.grid.shape)
            if frozen_proxies is not None:
                proxy = np.asarray(frozen_proxies[i], dtype=np.int64)
            else:
                rng = np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFFFFFF, 101, epoch, i])
                proxy = build_proxy_target(
                    em,
                    ctx.regions,
                    ctx.ssim_low,
                    ctx.thresholds,
                    p,
                    rng,
                    sampler_decay=cfg.sampler_decay,
                    region_routing=cfg.region_routing,
                )
            result = encode_frame(ctx.scene.frame, apply_emphasis(em))
            acc_c = float(oracle.score(result.recon, ctx.scene.gt_boxes))
            loss, grads = alignment_loss(probs, proxy.ravel(), acc_c, ctx.acc_r, cfg)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, frame {i}", log)
            model.apply_gradient(grads, lr)
            loss1 = abs(acc_c - ctx.acc_r)
            stats["loss"] += loss
            stats["loss1"] += loss1
            stats["loss2"] += (loss - cfg.lambda1 * loss1) / cfg.lambda2
            stats["acc_c"] += acc_c
            stats["acc_r"] += ctx.acc_r
            stats["mean_emphasis"] += float(em.mean())
        n = len(contexts)
        row = {"epoch": epoch, **{k: v / n for k, v in stats.items()}, "p": p, "lr": lr}

        val_gaps, val_sums = zip(*(_frame_gap_and_sum(model, ctx, oracle) for ctx in val_contexts))
        val_gap = float(np.mean(val_gaps))
        val_sum = float(np.mean(val_sums))
        row["val_acc_gap"] = val_gap
        row["val_emphasis_sum"] = val_sum
        log.append(row)

        acc_ok_streak = acc_ok_streak + 1 if val_gap <= cfg.tau else 0
        plateau = (
            prev_val_sum is not None
            and (prev_val_sum - val_sum) < 0.01 * max(prev_val_sum, 1e-9)
        )
        prev_val_sum = val_sum
        if frozen_proxies is None and acc_ok_streak >= 2 and plateau:
            break
    return model, log


@dataclass(frozen=True)
class ObjectiveResult:
    """Feasibility and cost of an emphasis map under the accuracy margin."""

    feasible: bool
    emphasis_sum: int
    acc_c: float
    acc_r: float


def evaluate_objective(
    em: np.ndarray,
    frame: Frame,
    scene: Scene,
    oracle: AccuracyOracle,
    tau: float,
) -> ObjectiveResult:
    """Encode under the map and test |acc_c - acc_r| <= tau."""
    levels = np.asarray(em, dtype=np.int64)
    result = encode_frame(frame, apply_emphasis(levels))
    acc_r = float(oracle.score(frame, scene.gt_boxes))
    acc_c = float(oracle.score(result.recon, scene.gt_boxes))
    return ObjectiveResult(
        feasible=abs(acc_c - acc_r) <= tau,
        emphasis_sum=int(levels.sum()),
        acc_c=acc_c,
        acc_r=acc_r,
    )


@dataclass(frozen=True, eq=False)
class BruteForceResult:
    """Outcome of exhaustive emphasis-map enumeration on a tiny frame."""

    feasible: bool
    em: np.ndarray
    emphasis_sum: int
    acc_c: float
    acc_r: float
    n_evaluated: int


def _bounded_compositions(total: int, cells: int, cap: int):
    # Lexicographically ascending level vectors with the given sum.
    if cells == 1:
        if 0 <= total <= cap:
            yield (total,)
        return
    for first in range(0, min(cap, total) + 1):
        if total - first > cap * (cells - 1):
            continue
        for rest in _bounded_compositions(total - first, cells - 1, cap):
            yield (first,) + rest


def brute_force_optimum(
    frame: Frame,
    scene: Scene,
    oracle: AccuracyOracle,
    tau: float,
    max_macroblocks: int = 9,
) -> BruteForceResult:
    """Minimal-sum feasible emphasis map by exhaustive enumeration.

    Maps are visited in order of increasing emphasis sum and, within a sum,
    in lexicographic row-major order, so the first feasible map found is the
    optimum with the documented tie-break. Per-level reconstructions are
    precomputed once per macroblock; intra coding makes the mosaic of tiles
    identical to encoding the full map. If no map is feasible the result
    reports the closest accuracy achieved.
    """
    grid = partition(frame)
    m = grid.n_macroblocks
    if m > max_macroblocks:
        raise InvalidInputError(f"{m} macroblocks exceed the enumeration limit {max_macroblocks}")

    from .codec import uniform_qp_map, DEFAULT_QP_TABLE
    from .frames import MB_SIZE

    level_recons = [
        encode_frame(frame, uniform_qp_map(grid.shape, DEFAULT_QP_TABLE[lv])).recon.luma
        for lv in range(N_LEVELS)
    ]
    acc_r = float(oracle.score(frame, scene.gt_boxes))

    mosaic = np.empty_like(level_recons[0])
    best_gap = np.inf
    best: tuple[np.ndarray, float] | None = None
    n_evaluated = 0
    for total in range(0, MAX_LEVEL * m + 1):
        for levels in _bounded_compositions(total, m, MAX_LEVEL):
            em = np.asarray(levels, dtype=np.int64).reshape(grid.shape)
            for r in range(grid.n_rows):
                y0, y1 = r * MB_SIZE, min((r + 1) * MB_SIZE, frame.height)
                for c in range(grid.n_cols):
                    x0, x1 = c * MB_SIZE, min((c + 1) * MB_SIZE, frame.width)
                    mosaic[y0:y1, x0:x1] = level_recons[em[r, c]][y0:y1, x0:x1]
            acc_c = float(oracle.score(Frame(mosaic), scene.gt_boxes))
            n_evaluated += 1
            gap = abs(acc_c - acc_r)
            if gap <= tau:
                return BruteForceResult(
                    feasible=True,
                    em=em,
                    emphasis_sum=total,
                    acc_c=acc_c,
                    acc_r=acc_r,
                    n_evaluated=n_evaluated,
                )
            if gap < best_gap:
                best_gap = gap
                best = (em, acc_c)
    assert best is not None
    return BruteForceResult(
        feasible=False,
        em=best[0],
        emphasis_sum=int(best[0].sum()),
        acc_c=best[1],
        acc_r=acc_r,
        n_evaluated=n_evaluated,
    )
