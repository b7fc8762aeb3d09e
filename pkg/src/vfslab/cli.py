"""Command-line entry point: generate | train | evaluate | predict | report.

Exit codes are a stable contract: 0 success, 1 runtime failure, 2 usage
error. Training runs live in an append-only runs directory; re-running an
existing run id is refused so every run stays reproducible from its
recorded config snapshot.
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from . import data as dataio
from . import toygen
from .checkpoint import CheckpointError, load_checkpoint
from .data import ClipRef, ClipSample, DatasetError
from .metrics import MetricsReport, render_table, report_to_csv
from .models import ModelConfig, build_model, count_parameters, predict_mask
from .training import TrainConfig, TrainingAborted, evaluate, train


class CliError(Exception):
    """Runtime failure that should exit with code 1."""


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from exc
    if h % 32 != 0 or w % 32 != 0:
        raise argparse.ArgumentTypeError(f"{text!r}: both sides must be divisible by 32")
    return h, w


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


# ---------------------------------------------------------------- generate


def cmd_generate(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    backgrounds = tuple(args.backgrounds.split(",")) if args.backgrounds else toygen.BACKGROUNDS
    for b in backgrounds:
        if b not in toygen.BACKGROUNDS:
            raise CliError(f"unknown background {b!r}, choose from {toygen.BACKGROUNDS}")
    lightings = {"day": ("day",), "night": ("night",), "both": ("day", "night")}[args.lighting]
    if args.spec_file:
        raw = json.loads(Path(args.spec_file).read_text())
        specs = [toygen.SceneSpec.from_dict(d) for d in raw]
    else:
        specs = []
        for i in range(args.videos):
            spec = toygen.sample_scene_spec(
                rng,
                size=args.size,
                num_frames=args.frames,
                backgrounds=(backgrounds[i % len(backgrounds)],),
                lightings=(lightings[i % len(lightings)],),
                camera_jitter=args.jitter,
                sprite_count=(args.min_sprites, args.max_sprites),
                name=f"toy{i:03d}",
            )
            specs.append(spec)
    try:
        manifest = toygen.write_toyset(specs, args.out, overwrite=args.overwrite)
    except (OSError, FileExistsError) as exc:
        raise CliError(str(exc)) from exc
    print(manifest)
    return 0


# ------------------------------------------------------------------- train


def _next_run_id(runs_dir: Path) -> str:
    n = 0
    while (runs_dir / f"run{n:03d}").exists():
        n += 1
    return f"run{n:03d}"


def _train_config_from_args(args: argparse.Namespace) -> TrainConfig:
    if args.config:
        cfg = TrainConfig.from_dict(json.loads(Path(args.config).read_text()))
    else:
        cfg = TrainConfig()
    model = cfg.model
    overrides = {
        "arch": args.arch,
        "T": args.T,
        "width_factor": args.width,
        "pretrained": args.pretrained or None,
        "threshold": args.threshold,
    }
    model_kwargs = model.to_dict()
    model_kwargs.update({k: v for k, v in overrides.items() if v is not None})
    cfg_kwargs = cfg.to_dict()
    for key, value in (
        ("lr0", args.lr),
        ("epochs", args.epochs),
        ("batch_size", args.batch_size),
        ("seed", args.seed),
        ("split_ratio", args.split_ratio),
        ("resolution", args.resolution),
        ("max_steps", args.max_steps),
        ("frame_stride", args.stride),
    ):
        if value is not None:
            cfg_kwargs[key] = value
    cfg_kwargs["model"] = model_kwargs
    return TrainConfig.from_dict(cfg_kwargs)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _train_config_from_args(args)
    runs_dir = Path(args.runs_dir)
    run_id = args.run_id or _next_run_id(runs_dir)
    run_dir = runs_dir / run_id
    if run_dir.exists():
        raise CliError(f"run directory {run_dir} already exists (runs are append-only)")
    manifest = dataio.scan_dataset(args.data, args.layout)
    frame_list = dataio.load_frame_list(args.frame_list) if args.frame_list else None

    run_dir.mkdir(parents=True)
    (run_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    record = {
        "run_id": run_id,
        "created": _now(),
        "data": str(args.data),
        "layout": args.layout,
        "status": "running",
    }
    record_path = run_dir / "run.json"
    record_path.write_text(json.dumps(record, indent=2) + "\n")

    try:
        result = train(cfg, manifest, run_dir, frame_list=frame_list, progress=print)
    except TrainingAborted as exc:
        record.update({"status": "aborted", "finished": _now(), "error": str(exc)})
        record_path.write_text(json.dumps(record, indent=2) + "\n")
        raise CliError(str(exc)) from exc
    record.update(
        {
            "status": "done",
            "finished": _now(),
            "param_count": result.param_count,
            "best_val_f1": result.best_val_f1,
            "best_checkpoint": str(result.best_checkpoint),
            "last_checkpoint": str(result.last_checkpoint),
        }
    )
    record_path.write_text(json.dumps(record, indent=2) + "\n")
    print(f"run {run_id}: {result.param_count} parameters, best val F1 {result.best_val_f1}")
    print(run_dir)
    return 0


# ---------------------------------------------------------------- evaluate


def _resolve_checkpoint(args: argparse.Namespace) -> tuple[Path, Optional[Path]]:
    if args.checkpoint:
        return Path(args.checkpoint), None
    run_dir = Path(args.run)
    best = run_dir / "checkpoints" / "best.ckpt"
    if not best.is_file():
        raise CliError(f"no best.ckpt under {run_dir}")
    return best, run_dir


def cmd_evaluate(args: argparse.Namespace) -> int:
    ckpt_path, run_dir = _resolve_checkpoint(args)
    if not ckpt_path.is_file():
        raise CliError(f"checkpoint {ckpt_path} does not exist")
    model, _ = load_checkpoint(ckpt_path)
    resolution = args.resolution
    if resolution is None and run_dir is not None:
        cfg = TrainConfig.from_dict(json.loads((run_dir / "config.json").read_text()))
        resolution = cfg.resolution
    if resolution is None:
        resolution = (320, 480)
    manifest = dataio.scan_dataset(args.data, args.layout)
    frame_list = dataio.load_frame_list(args.frame_list) if args.frame_list else None
    domain = "ood" if args.ood else "in-domain"
    report = evaluate(
        model,
        manifest,
        resolution,
        frame_stride=args.stride or 1,
        domain=domain,
        overall_by=args.overall_by,
        frame_list=frame_list,
    )
    if args.out:
        out_dir = Path(args.out)
    elif run_dir is not None:
        name = f"{domain}-{Path(args.data).name}"
        out_dir = run_dir / "reports" / name
    else:
        out_dir = Path(f"eval-{domain}-{Path(args.data).name}")
    out_dir.mkdir(parents=True, exist_ok=True)
    report_to_csv(report, out_dir / "report.csv")
    table = render_table(report)
    (out_dir / "report.txt").write_text(table)
    report.to_json(out_dir / "report.json")
    print(table)
    print(out_dir)
    return 0


# ----------------------------------------------------------------- predict


def _video_frame_paths(video_dir: Path) -> list[Path]:
    frames_dir = video_dir / "frames"
    candidates = frames_dir if frames_dir.is_dir() else video_dir
    paths = sorted(
        (p for p in candidates.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp")),
        key=lambda p: p.name,
    )
    if not paths:
        raise CliError(f"no image files found under {video_dir}")
    return paths


def cmd_predict(args: argparse.Namespace) -> int:
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.is_file():
        raise CliError(f"checkpoint {ckpt_path} does not exist")
    model, _ = load_checkpoint(ckpt_path)
    cfg: ModelConfig = model.cfg
    paths = _video_frame_paths(Path(args.video))

    with Image.open(paths[0]) as im:
        native = (im.height, im.width)
    resolution = args.resolution or native
    if resolution[0] % 32 != 0 or resolution[1] % 32 != 0:
        raise CliError(
            f"frame size {resolution} not divisible by 32; pass --resolution HxW to resize"
        )
    h, w = resolution
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for t in range(len(paths)):
            window = [max(0, t - (cfg.T - 1 - j) * (args.stride or 1)) for j in range(cfg.T)]
            frames = np.empty((cfg.T, h, w, 3), dtype=np.float32)
            for k, idx in enumerate(window):
                with Image.open(paths[idx]) as im:
                    img = im.convert("RGB")
                    if img.size != (w, h):
                        img = img.resize((w, h), Image.BILINEAR)
                    frames[k] = np.asarray(img, dtype=np.float32) / 255.0
            clip = ClipSample(
                frames=frames,
                target=np.zeros((h, w), dtype=np.uint8),
                ignore=np.zeros((h, w), dtype=np.uint8),
                meta=ClipRef("predict", t, tuple(window)),
            )
            pred = predict_mask(model, clip)
            quant = np.round(pred.probabilities * 65535.0).astype(np.uint16)
            mask = (quant.astype(np.float64) / 65535.0 >= cfg.threshold).astype(np.uint8) * 255
            Image.fromarray(quant).save(out_dir / f"prob_{t + 1:06d}.png")
            Image.fromarray(mask).save(out_dir / f"mask_{t + 1:06d}.png")
    except OSError as exc:
        raise CliError(f"failed writing predictions: {exc}") from exc
    print(out_dir)
    return 0


# ------------------------------------------------------------------ report


def _run_row(run_dir: Path) -> dict:
    cfg = TrainConfig.from_dict(json.loads((run_dir / "config.json").read_text()))
    record = json.loads((run_dir / "run.json").read_text())
    params = record.get("param_count")
    if params is None:
        params = count_parameters(build_model(cfg.model))
    row = {
        "run_id": record.get("run_id", run_dir.name),
        "arch": cfg.model.arch,
        "T": cfg.model.T,
        "width": cfg.model.width_factor,
        "params": params,
        "val_f1": record.get("best_val_f1"),
    }
    reports = sorted((run_dir / "reports").glob("*/report.json")) if (run_dir / "reports").is_dir() else []
    for rpt_path in reports:
        report = MetricsReport.from_json(rpt_path)
        tag = report.domain
        row[f"{tag}_f1"] = report.overall.f1
        row[f"{tag}_pr"] = report.overall.precision
        row[f"{tag}_re"] = report.overall.recall
        row[f"{tag}_sp"] = report.overall.specificity
    return row


def cmd_report(args: argparse.Namespace) -> int:
    if args.runs:
        run_dirs = [Path(r) for r in args.runs]
    else:
        runs_dir = Path(args.runs_dir)
        run_dirs = sorted(p for p in runs_dir.glob("*") if p.is_dir()) if runs_dir.is_dir() else []
    rows = []
    for run_dir in run_dirs:
        try:
            rows.append(_run_row(run_dir))
        except Exception as exc:
            print(f"warning: skipping {run_dir}: {exc}", file=sys.stderr)
    if not rows:
        print("no runs found", file=sys.stderr)
        return 1
    columns = ["run_id", "arch", "T", "width", "params", "val_f1"]
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    widths = {c: max(len(c), *(len(_fmt_cell(r.get(c))) for r in rows)) for c in columns}
    header = "  ".join(c.ljust(widths[c]) for c in columns)
    print(header)
    print("-" * len(header))
    for row in rows:
        print("  ".join(_fmt_cell(row.get(c)).ljust(widths[c]) for c in columns))
    if args.out:
        import csv

        with Path(args.out).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=columns)
            w.writeheader()
            for row in rows:
                w.writerow({c: row.get(c, "") for c in columns})
    return 0


def _fmt_cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vfslab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a toy surveillance dataset")
    g.add_argument("-o", "--out", required=True, help="output dataset directory")
    g.add_argument("--videos", type=int, default=4)
    g.add_argument("--frames", type=int, default=30)
    g.add_argument("--size", type=_parse_size, default=(64, 96), help="HxW, divisible by 32")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--backgrounds", default=None, help="comma list, default all kinds")
    g.add_argument("--lighting", choices=("day", "night", "both"), default="day")
    g.add_argument("--jitter", type=float, default=0.0)
    g.add_argument("--min-sprites", type=int, default=1)
    g.add_argument("--max-sprites", type=int, default=3)
    g.add_argument("--spec-file", default=None, help="JSON list of scene specs (overrides sampling)")
    g.add_argument("--overwrite", action="store_true")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--layout", choices=("auto", "cdnet", "simple"), default="auto")
    t.add_argument("--config", default=None, help="TrainConfig JSON file")
    t.add_argument("--arch", choices=("mustan1", "mustan2", "unet_baseline"), default=None)
    t.add_argument("--T", type=int, default=None)
    t.add_argument("--width", type=float, default=None, help="width factor, 1.0 = full size")
    t.add_argument("--pretrained", action="store_true")
    t.add_argument("--threshold", type=float, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--split-ratio", type=float, default=None)
    t.add_argument("--resolution", type=_parse_size, default=None)
    t.add_argument("--max-steps", type=int, default=None)
    t.add_argument("--stride", type=int, default=None, help="frame stride inside the window")
    t.add_argument("--frame-list", default=None, help="explicit 'video frame' list file")
    t.add_argument("--runs-dir", default="runs")
    t.add_argument("--run-id", default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", default=None)
    src.add_argument("--run", default=None, help="run directory (uses its best checkpoint)")
    e.add_argument("--data", required=True)
    e.add_argument("--layout", choices=("auto", "cdnet", "simple"), default="auto")
    e.add_argument("--resolution", type=_parse_size, default=None)
    e.add_argument("--stride", type=int, default=None)
    e.add_argument("--ood", action="store_true", help="label the report out-of-domain")
    e.add_argument("--overall-by", choices=("category", "video"), default="category")
    e.add_argument("--frame-list", default=None)
    e.add_argument("--out", default=None, help="report output directory")
    e.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="write probability and mask images for a video directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--video", required=True, help="directory of frames (or with a frames/ subdir)")
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=_parse_size, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.set_defaults(func=cmd_predict)

    r = sub.add_parser("report", help="merge runs into one comparison table")
    r.add_argument("runs", nargs="*", help="run directories (default: everything in --runs-dir)")
    r.add_argument("--runs-dir", default="runs")
    r.add_argument("--out", default=None, help="also write the table as CSV")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, DatasetError, CheckpointError, TrainingAborted) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
