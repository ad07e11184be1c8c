"""Command-line interface.

Subcommands: gen, pet, train, sweep, heatmap, ablate, encode, qpmatrix.
Exit codes: 0 success, 2 configuration error, 3 IO/parse error, 4 training
error. Every command is bit-reproducible under a fixed seed.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import pipeline, render
from .codec import (
    apply_emphasis,
    emphasis_map_from_json,
    encode_frame,
    qp_map_from_json,
    write_qp_matrix,
)
from .config import RunConfig, load_run_config
from .errors import (
    InvalidConfigError,
    InvalidInputError,
    MbaqError,
    ParseError,
    PlacementError,
    TrainingError,
)
from .frames import read_pgm, write_pgm
from .quality import per_mb_ssim, psnr
from .thresholds import lowest_quality_encode, proxy_emphasis_threshold
from .training import EPOCH_LOG_COLUMNS, LinearEmphasisModel

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_TRAINING = 4


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "interval", None) is not None:
        overrides["interval"] = args.interval
    if getattr(args, "tau", None) is not None:
        overrides["tau"] = args.tau
    if getattr(args, "scenes", None) is not None:
        overrides["n_scenes"] = args.scenes
    if getattr(args, "frames", None) is not None:
        overrides["frames_per_scene"] = args.frames
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _read_map_json(path):
    """Load a map JSON; returns ('emphasis'|'qp', ndarray)."""
    try:
        with open(path, "r", encoding="ascii") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if "levels" in obj:
        return "emphasis", emphasis_map_from_json(obj)
    if "qp" in obj:
        return "qp", qp_map_from_json(obj)
    raise ParseError(f"{path}: map JSON needs a 'levels' or 'qp' field")


def cmd_gen(args) -> int:
    cfg = _load_config(args)
    sequences = pipeline.generate_corpus(cfg)
    pipeline.save_corpus(args.out, sequences, cfg)
    n_frames = sum(len(s) for s in sequences)
    print(f"wrote {len(sequences)} scenes ({n_frames} frames) to {args.out}")
    return EXIT_OK


def cmd_pet(args) -> int:
    frame = read_pgm(args.frame)
    low = lowest_quality_encode(frame)
    thr = proxy_emphasis_threshold(frame, low, args.pct_roi, args.pct_bg)
    report = {
        "schema_version": pipeline.REPORT_SCHEMA_VERSION,
        "t_roi": thr.t_roi,
        "t_bg": thr.t_bg,
        "pct_roi": thr.pct_roi,
        "pct_bg": thr.pct_bg,
        "mean_mb_ssim": float(per_mb_ssim(frame, low).mean()),
    }
    if args.out:
        pipeline.write_json(args.out, report)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    sequences = pipeline.load_corpus(args.corpus)
    model_path = Path(args.model_out)
    log_path = Path(args.log_out) if args.log_out else model_path.with_suffix(".log.csv")
    try:
        model, log, splits = pipeline.train_on_corpus(sequences, cfg)
    except TrainingError as exc:
        # Keep the partial epoch log around for debugging diverged runs.
        pipeline.write_csv(log_path, EPOCH_LOG_COLUMNS, exc.log)
        raise
    model_path.parent.mkdir(parents=True, exist_ok=True)
    pipeline.write_json(
        model_path,
        {
            "schema_version": pipeline.REPORT_SCHEMA_VERSION,
            "model": model.to_json(),
            "splits": {"train": splits[0], "val": splits[1], "test": splits[2]},
            "seed": cfg.seed,
        },
    )
    pipeline.write_csv(log_path, EPOCH_LOG_COLUMNS, log)
    final = log[-1]
    print(
        f"trained {len(log)} epochs; final val acc gap {final['val_acc_gap']:.4f}; "
        f"model -> {model_path}, log -> {log_path}"
    )
    return EXIT_OK


def _load_model(path) -> tuple[LinearEmphasisModel, dict]:
    try:
        with open(path, "r", encoding="ascii") as fh:
            obj = json.load(fh)
        return LinearEmphasisModel.from_json(obj["model"]), obj
    except FileNotFoundError as exc:
        raise InvalidConfigError(f"model file not found: {path}") from exc
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: corrupted model JSON: {exc}") from exc


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    sequences = pipeline.load_corpus(args.corpus)
    model, meta = _load_model(args.model)
    if args.all_scenes or "splits" not in meta:
        scene_ids = list(range(len(sequences)))
    else:
        scene_ids = [i for i in meta["splits"]["test"] if i < len(sequences)]
        if not scene_ids:
            scene_ids = list(range(len(sequences)))
    report = pipeline.run_sweep(
        [sequences[i] for i in scene_ids], model, cfg, scene_ids=scene_ids
    )
    paths = pipeline.write_sweep_outputs(report, args.out)
    for agg in report.aggregates:
        print(
            f"{agg['method']:>12}: bits={agg['total_bits']} "
            f"acc_gap={agg['mean_acc_gap']:.4f} ssim={agg['mean_ssim']:.4f} "
            f"feasible={agg['feasible_fraction']:.2f}"
        )
    print(f"report -> {paths['summary']}")
    return EXIT_OK


def cmd_heatmap(args) -> int:
    kind, grid = _read_map_json(args.map)
    image = (
        render.render_emphasis_heatmap(grid)
        if kind == "emphasis"
        else render.render_qp_heatmap(grid)
    )
    render.write_ppm(image, args.out)
    print(f"{kind} heatmap {image.shape[1]}x{image.shape[0]} -> {args.out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    sequences = pipeline.load_corpus(args.corpus)
    rows = pipeline.run_ablation(sequences, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "ablation.csv"
    pipeline.write_csv(csv_path, pipeline.ABLATION_COLUMNS, rows)
    print(f"{len(rows)} ablation rows -> {csv_path}")
    return EXIT_OK


def cmd_encode(args) -> int:
    frame = read_pgm(args.frame)
    kind, grid = _read_map_json(args.map)
    qp_map = apply_emphasis(grid) if kind == "emphasis" else grid
    result = encode_frame(frame, qp_map)
    if args.recon_out:
        write_pgm(result.recon, args.recon_out)
    summary = {
        "schema_version": pipeline.REPORT_SCHEMA_VERSION,
        "total_bits": result.total_bits,
        "bitrate_bps": result.total_bits * pipeline.FPS,
        "mean_ssim": float(per_mb_ssim(frame, result.recon).mean()),
        "psnr_db": psnr(frame, result.recon),
    }
    if args.summary_out:
        pipeline.write_json(args.summary_out, summary)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_qpmatrix(args) -> int:
    maps = []
    for path in args.map:
        kind, grid = _read_map_json(path)
        maps.append(apply_emphasis(grid) if kind == "emphasis" else grid)
    write_qp_matrix(maps, args.out)
    print(f"{len(maps)} QP map(s) -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mbaq",
        description="Macroblock-level adaptive quantization: corpus, training, and benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config=True, seed=True):
        if config:
            p.add_argument("--config", help="key/value config file")
        if seed:
            p.add_argument("--seed", type=int, help="override the run seed")

    p = sub.add_parser("gen", help="generate a scene corpus on disk")
    add_common(p)
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--scenes", type=int, help="number of scenes")
    p.add_argument("--frames", type=int, help="frames per scene")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("pet", help="compute exploration thresholds for a frame")
    p.add_argument("--frame", required=True, help="input PGM frame")
    p.add_argument("--pct-roi", type=float, default=0.9)
    p.add_argument("--pct-bg", type=float, default=0.5)
    p.add_argument("--out", help="threshold report JSON path")
    p.set_defaults(func=cmd_pet)

    p = sub.add_parser("train", help="train the emphasis model on a corpus")
    add_common(p)
    p.add_argument("--corpus", required=True, help="corpus directory from gen")
    p.add_argument("--model-out", required=True, help="model JSON output path")
    p.add_argument("--log-out", help="epoch log CSV path")
    p.add_argument("--tau", type=float, help="accuracy margin")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="benchmark trained model against baselines")
    add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True, help="model JSON from train")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--tau", type=float, help="accuracy margin")
    p.add_argument("--interval", type=int, help="re-run prediction every k frames")
    p.add_argument("--all-scenes", action="store_true", help="evaluate every scene, not the test split")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("heatmap", help="render an emphasis or QP map JSON to PPM")
    p.add_argument("--map", required=True, help="map JSON path")
    p.add_argument("--out", required=True, help="PPM output path")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("ablate", help="routing/decay/interval ablation grid")
    add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--tau", type=float, help="accuracy margin")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("encode", help="encode one frame under a map")
    p.add_argument("--frame", required=True, help="input PGM frame")
    p.add_argument("--map", required=True, help="emphasis or QP map JSON")
    p.add_argument("--recon-out", help="reconstruction PGM path")
    p.add_argument("--summary-out", help="bits/quality summary JSON path")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("qpmatrix", help="export map JSONs to a QP-matrix text file")
    p.add_argument("--map", required=True, action="append", help="map JSON (repeatable)")
    p.add_argument("--out", required=True, help="QP-matrix text path")
    p.set_defaults(func=cmd_qpmatrix)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvalidConfigError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (ParseError, PlacementError, InvalidInputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except MbaqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
