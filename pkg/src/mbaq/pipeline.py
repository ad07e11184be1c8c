"""Corpus management, benchmark sweeps, and ablation grids.

Everything here is deterministic under a fixed RunConfig: corpus files,
splits, CSV reports, and QP-matrix exports are bit-reproducible.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import baselines
from .accuracy import DetectionOracle
from .codec import apply_emphasis, encode_frame, qp_map_to_json, write_qp_matrix
from .config import RunConfig
from .errors import InvalidInputError, ParseError
from .frames import BoundingBox, Frame, Scene, classify_regions, generate_sequence, partition, read_pgm, write_pgm
from .quality import per_mb_ssim, psnr
from .thresholds import lowest_quality_encode
from .training import (
    LinearEmphasisModel,
    SceneContext,
    TrainerConfig,
    predict_emphasis,
    prepare_scene,
    train,
)

REPORT_SCHEMA_VERSION = 1

METHOD_EMPHASIS = "emphasis"
METHOD_UNIFORM = "uniform"
METHOD_BINARY = "binary_roi"
METHOD_VARIANCE = "variance_aq"

ROW_COLUMNS = (
    "scene_id",
    "frame",
    "method",
    "bits",
    "bitrate_bps",
    "acc_r",
    "acc_c",
    "feasible",
    "mean_ssim",
    "psnr_db",
    "emphasis_sum",
)

AGGREGATE_COLUMNS = (
    "method",
    "frames",
    "total_bits",
    "mean_bits",
    "bitrate_bps",
    "mean_acc_r",
    "mean_acc_c",
    "mean_acc_gap",
    "feasible_fraction",
    "mean_ssim",
    "mean_psnr_db",
)

FPS = 30


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def write_csv(path, columns, rows) -> None:
    """Write dict rows with fixed column order and stable float formatting."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row.get(col, "")) for col in columns) + "\n")


def write_json(path, obj) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Corpus on disk


def scene_frame_path(out_dir: Path, scene_id: int, frame_idx: int) -> Path:
    name = f"scene_{scene_id:04d}.pgm" if frame_idx == 0 else f"scene_{scene_id:04d}_f{frame_idx:02d}.pgm"
    return Path(out_dir) / name


def generate_corpus(cfg: RunConfig) -> list[list[Scene]]:
    """Generate n_scenes sequences of frames_per_scene frames each."""
    return [
        generate_sequence(cfg.seed + sid, cfg.scene, cfg.frames_per_scene)
        for sid in range(cfg.n_scenes)
    ]


def save_corpus(out_dir, sequences, cfg: RunConfig) -> None:
    """Write one PGM per frame and one ground-truth JSON per scene."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for sid, scenes in enumerate(sequences):
        for t, scene in enumerate(scenes):
            write_pgm(scene.frame, scene_frame_path(out, sid, t))
        meta = {
            "scene_id": sid,
            "seed": scenes[0].seed,
            "frames": [
                {
                    "index": t,
                    "pgm": scene_frame_path(out, sid, t).name,
                    "boxes": [b.to_dict() for b in scene.gt_boxes],
                }
                for t, scene in enumerate(scenes)
            ],
            "scene_config": dataclasses.asdict(cfg.scene),
        }
        write_json(out / f"scene_{sid:04d}.json", meta)


def load_corpus(corpus_dir) -> list[list[Scene]]:
    """Read back sequences written by save_corpus."""
    root = Path(corpus_dir)
    metas = sorted(root.glob("scene_*.json"))
    if not metas:
        raise InvalidInputError(f"no scene JSON files found in {root}")
    sequences: list[list[Scene]] = []
    for meta_path in metas:
        try:
            with open(meta_path, "r", encoding="ascii") as fh:
                meta = json.load(fh)
            seed = int(meta["seed"])
            frames = meta["frames"]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{meta_path}: corrupted scene metadata: {exc}") from exc
        scenes = []
        for entry in frames:
            frame = read_pgm(root / entry["pgm"])
            boxes = tuple(BoundingBox.from_dict(b) for b in entry["boxes"])
            scenes.append(Scene(frame=frame, gt_boxes=boxes, seed=seed))
        sequences.append(scenes)
    return sequences


def split_corpus(n: int, seed: int) -> tuple[list[int], list[int], list[int]]:
    """Deterministic 70:20:10 split of scene indices by seeded shuffle."""
    order = list(np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 53]).permutation(n))
    n_train = int(0.7 * n)
    n_val = int(0.2 * n)
    train_ids = sorted(int(i) for i in order[:n_train])
    val_ids = sorted(int(i) for i in order[n_train : n_train + n_val])
    test_ids = sorted(int(i) for i in order[n_train + n_val :])
    return train_ids, val_ids, test_ids


def build_oracle(cfg: RunConfig) -> DetectionOracle:
    return DetectionOracle(detector=cfg.detector, iou_thresh=cfg.iou_thresh)


def prepare_contexts(sequences, oracle, cfg: RunConfig) -> list[SceneContext]:
    """Per-scene contexts from the first (representative) frame of each sequence.

    With pet_shared, thresholds from the first scene are reused everywhere.
    """
    shared = None
    contexts = []
    for scenes in sequences:
        ctx = prepare_scene(
            scenes[0], oracle, cfg.trainer.pct_roi, cfg.trainer.pct_bg, thresholds=shared
        )
        if cfg.pet_shared and shared is None:
            shared = ctx.thresholds
        contexts.append(ctx)
    return contexts


# ---------------------------------------------------------------------------
# Training entry


def train_on_corpus(sequences, cfg: RunConfig):
    """Split, train on the train split, stop on validation; returns
    (model, log, (train_ids, val_ids, test_ids))."""
    oracle = build_oracle(cfg)
    train_ids, val_ids, test_ids = split_corpus(len(sequences), cfg.seed)
    contexts = prepare_contexts(sequences, oracle, cfg)
    trainer_cfg = dataclasses.replace(cfg.trainer, tau=cfg.tau, seed=cfg.seed)
    model, log = train(
        [contexts[i] for i in train_ids],
        oracle,
        trainer_cfg,
        val_corpus=[contexts[i] for i in val_ids] or None,
    )
    return model, log, (train_ids, val_ids, test_ids)


# ---------------------------------------------------------------------------
# Sweep


def _measure(frame: Frame, qp_map, scene: Scene, oracle, tau, method, emphasis_sum=""):
    result = encode_frame(frame, qp_map)
    acc_r = float(oracle.score(frame, scene.gt_boxes))
    acc_c = float(oracle.score(result.recon, scene.gt_boxes))
    ssim_grid = per_mb_ssim(frame, result.recon)
    return {
        "method": method,
        "bits": result.total_bits,
        "bitrate_bps": result.total_bits * FPS,
        "acc_r": acc_r,
        "acc_c": acc_c,
        "feasible": abs(acc_c - acc_r) <= tau,
        "mean_ssim": float(ssim_grid.mean()),
        "psnr_db": psnr(frame, result.recon),
        "emphasis_sum": emphasis_sum,
        "qp_map": qp_map,
    }


def _variance_base_search(frame, scene, oracle, tau, cfg: RunConfig):
    acc_r = float(oracle.score(frame, scene.gt_boxes))
    last_map = None
    for base_qp in (45, 43, 37, 34, 30):
        qp_map = baselines.variance_aq(
            frame,
            base_qp,
            strength=cfg.variance_strength,
            clamp=cfg.variance_clamp,
            flat_low_qp=cfg.variance_flat_low_qp,
        )
        recon = encode_frame(frame, qp_map).recon
        acc_c = float(oracle.score(recon, scene.gt_boxes))
        last_map = qp_map
        if abs(acc_c - acc_r) <= tau:
            return qp_map
    return last_map


@dataclass(frozen=True, eq=False)
class SweepReport:
    rows: list[dict]
    aggregates: list[dict]
    qp_maps: dict[str, list[np.ndarray]]
    summary: dict


def run_sweep(sequences, model: LinearEmphasisModel, cfg: RunConfig, scene_ids=None) -> SweepReport:
    """Evaluate the trained model and the enabled baselines on sequences.

    The emphasis prediction is recomputed every `interval` frames and reused
    in between; baselines operate per frame.
    """
    oracle = build_oracle(cfg)
    methods = [METHOD_EMPHASIS]
    if cfg.run_uniform:
        methods.append(METHOD_UNIFORM)
    if cfg.run_binary_roi:
        methods.append(METHOD_BINARY)
    if cfg.run_variance_aq:
        methods.append(METHOD_VARIANCE)

    rows: list[dict] = []
    qp_maps: dict[str, list[np.ndarray]] = {m: [] for m in methods}
    ids = list(scene_ids) if scene_ids is not None else list(range(len(sequences)))
    for sid, scenes in zip(ids, sequences):
        current_em = None
        for t, scene in enumerate(scenes):
            frame = scene.frame
            grid = partition(frame)
            regions = classify_regions(grid, scene.gt_boxes)
            if t % cfg.interval == 0 or current_em is None:
                ctx = prepare_scene(scene, oracle, cfg.trainer.pct_roi, cfg.trainer.pct_bg)
                current_em = predict_emphasis(model, ctx)
            per_frame = {}
            per_frame[METHOD_EMPHASIS] = _measure(
                frame,
                apply_emphasis(current_em),
                scene,
                oracle,
                cfg.tau,
                METHOD_EMPHASIS,
                emphasis_sum=int(current_em.sum()),
            )
            if cfg.run_uniform:
                ub = baselines.uniform_qp_search(frame, scene, oracle, cfg.tau)
                per_frame[METHOD_UNIFORM] = _measure(
                    frame, ub.qp_map, scene, oracle, cfg.tau, METHOD_UNIFORM
                )
            if cfg.run_binary_roi:
                bmap = baselines.binary_roi_assignment(
                    regions, cfg.binary_qp_high, cfg.binary_qp_low
                )
                per_frame[METHOD_BINARY] = _measure(
                    frame, bmap, scene, oracle, cfg.tau, METHOD_BINARY
                )
            if cfg.run_variance_aq:
                vmap = _variance_base_search(frame, scene, oracle, cfg.tau, cfg)
                per_frame[METHOD_VARIANCE] = _measure(
                    frame, vmap, scene, oracle, cfg.tau, METHOD_VARIANCE
                )
            for method in methods:
                row = per_frame[method]
                qp_maps[method].append(row.pop("qp_map"))
                rows.append({"scene_id": sid, "frame": t, **row})

    aggregates = [_aggregate(rows, m) for m in methods]
    uniform_bits = next(
        (a["total_bits"] for a in aggregates if a["method"] == METHOD_UNIFORM), None
    )
    savings = {}
    if uniform_bits:
        for agg in aggregates:
            savings[agg["method"]] = 1.0 - agg["total_bits"] / uniform_bits
    summary = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "tau": cfg.tau,
        "interval": cfg.interval,
        "methods": list(methods),
        "aggregates": {a["method"]: {k: a[k] for k in AGGREGATE_COLUMNS if k != "method"} for a in aggregates},
        "savings_vs_uniform": savings,
    }
    return SweepReport(rows=rows, aggregates=aggregates, qp_maps=qp_maps, summary=summary)


def _aggregate(rows, method) -> dict:
    sel = [r for r in rows if r["method"] == method]
    n = len(sel)
    total_bits = sum(r["bits"] for r in sel)
    return {
        "method": method,
        "frames": n,
        "total_bits": total_bits,
        "mean_bits": total_bits / n,
        "bitrate_bps": total_bits * FPS / n,
        "mean_acc_r": sum(r["acc_r"] for r in sel) / n,
        "mean_acc_c": sum(r["acc_c"] for r in sel) / n,
        "mean_acc_gap": sum(abs(r["acc_c"] - r["acc_r"]) for r in sel) / n,
        "feasible_fraction": sum(1 for r in sel if r["feasible"]) / n,
        "mean_ssim": sum(r["mean_ssim"] for r in sel) / n,
        "mean_psnr_db": sum(r["psnr_db"] for r in sel) / n,
    }


def write_sweep_outputs(report: SweepReport, out_dir) -> dict[str, Path]:
    """Write row/aggregate CSVs, the summary JSON, QP matrices, and first-frame maps."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    rows_path = out / "sweep_rows.csv"
    write_csv(rows_path, ROW_COLUMNS, report.rows)
    paths["rows"] = rows_path
    agg_path = out / "sweep_aggregates.csv"
    write_csv(agg_path, AGGREGATE_COLUMNS, report.aggregates)
    paths["aggregates"] = agg_path
    summary_path = out / "summary.json"
    write_json(summary_path, report.summary)
    paths["summary"] = summary_path
    for method, maps in report.qp_maps.items():
        matrix_path = out / f"qp_matrix_{method}.txt"
        write_qp_matrix(maps, matrix_path)
        paths[f"qp_matrix_{method}"] = matrix_path
        if maps:
            map_path = out / f"qp_map_{method}_first.json"
            write_json(map_path, qp_map_to_json(maps[0]))
            paths[f"qp_map_{method}"] = map_path
    return paths


# ---------------------------------------------------------------------------
# Ablation


ABLATION_COLUMNS = (
    "region_routing",
    "p_decay",
    "interval",
    "total_bits",
    "normalized_bits",
    "mean_acc_gap",
    "feasible_fraction",
    "epochs",
)

ABLATION_DECAYS = (0.1, 0.15, 0.2, 0.25, 0.3)
ABLATION_INTERVALS = (1, 2, 3, 4, 5)


def run_ablation(
    sequences,
    cfg: RunConfig,
    decays=ABLATION_DECAYS,
    intervals=ABLATION_INTERVALS,
) -> list[dict]:
    """Train over {with, without region routing} x decay, evaluate per interval.

    Bits are normalized to the (routing on, first decay, interval 1) cell.
    """
    oracle = build_oracle(cfg)
    train_ids, val_ids, _ = split_corpus(len(sequences), cfg.seed)
    contexts = prepare_contexts(sequences, oracle, cfg)
    rows: list[dict] = []
    for routing in (True, False):
        for decay in decays:
            trainer_cfg = dataclasses.replace(
                cfg.trainer,
                tau=cfg.tau,
                seed=cfg.seed,
                p_decay=decay,
                region_routing=routing,
            )
            model, log = train(
                [contexts[i] for i in train_ids],
                oracle,
                trainer_cfg,
                val_corpus=[contexts[i] for i in val_ids] or None,
            )
            eval_cfg = dataclasses.replace(
                cfg, run_uniform=False, run_binary_roi=False, run_variance_aq=False
            )
            for interval in intervals:
                report = run_sweep(
                    sequences,
                    model,
                    dataclasses.replace(eval_cfg, interval=interval),
                )
                agg = report.aggregates[0]
                rows.append(
                    {
                        "region_routing": routing,
                        "p_decay": decay,
                        "interval": interval,
                        "total_bits": agg["total_bits"],
                        "mean_acc_gap": agg["mean_acc_gap"],
                        "feasible_fraction": agg["feasible_fraction"],
                        "epochs": len(log),
                    }
                )
    base_bits = rows[0]["total_bits"]
    for row in rows:
        row["normalized_bits"] = row["total_bits"] / base_bits if base_bits else 0.0
    return rows
