"""Training loop, step learning-rate schedule, checkpointing and the
evaluation driver.

A run writes, under its output directory: ``log.jsonl`` (one JSON record
per optimizer step plus one per epoch carrying the validation F1),
``checkpoints/epoch_NNN.ckpt`` for every epoch and ``best.ckpt`` tracking
the best validation F1. Log records contain no timestamps so reruns with
the same seed and config produce identical files.
"""

from __future__ import annotations

import json
import math
import random
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from . import data as dataio
from .checkpoint import save_checkpoint
from .data import ClipRef, DatasetManifest
from .losses import LossConfig, combined_loss
from .metrics import ConfusionCounts, MetricsReport, aggregate_report, confusion_counts, metrics_from_counts
from .models import ModelConfig, build_model, count_parameters, predict_mask


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    step_size: int = 20
    gamma: float = 0.1
    epochs: int = 40
    batch_size: int = 8
    seed: int = 0
    split_ratio: float = 0.9
    split_per_video: bool = False
    frame_stride: int = 1
    resolution: tuple[int, int] = (320, 480)
    max_steps: Optional[int] = None
    augment: bool = False  # reserved knob, no augmentation is implemented
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self) -> None:
        if self.lr0 <= 0 or self.gamma <= 0:
            raise ValueError("lr0 and gamma must be > 0")
        if self.step_size < 1 or self.epochs < 1 or self.batch_size < 1 or self.frame_stride < 1:
            raise ValueError("step_size, epochs, batch_size and frame_stride must be >= 1")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must be in (0, 1)")
        h, w = self.resolution
        if h % 32 != 0 or w % 32 != 0:
            raise ValueError(f"resolution must be divisible by 32, got {self.resolution}")
        if self.augment:
            raise NotImplementedError("augmentation hook is reserved but not implemented")

    def to_dict(self) -> dict:
        return {
            "lr0": self.lr0,
            "step_size": self.step_size,
            "gamma": self.gamma,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "split_ratio": self.split_ratio,
            "split_per_video": self.split_per_video,
            "frame_stride": self.frame_stride,
            "resolution": list(self.resolution),
            "max_steps": self.max_steps,
            "augment": self.augment,
            "loss": self.loss.to_dict(),
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["resolution"] = tuple(d.get("resolution", (320, 480)))
        d["loss"] = LossConfig.from_dict(d.get("loss", {}))
        d["model"] = ModelConfig.from_dict(d.get("model", {}))
        return cls(**d)


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Step decay: lr0 * gamma ** floor(epoch / step_size)."""
    return cfg.lr0 * cfg.gamma ** (epoch // cfg.step_size)


@dataclass
class TrainResult:
    out_dir: Path
    log_path: Path
    best_checkpoint: Path
    last_checkpoint: Path
    best_val_f1: Optional[float]
    param_count: int
    history: list[dict]


def _batch_tensors(samples: list) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    frames = torch.from_numpy(np.stack([s.frames for s in samples])).permute(0, 1, 4, 2, 3)
    targets = torch.from_numpy(np.stack([s.target for s in samples])).float()
    ignores = torch.from_numpy(np.stack([s.ignore for s in samples]))
    return frames.contiguous(), targets, ignores


def _validation_f1(
    model: torch.nn.Module,
    manifest: DatasetManifest,
    clips: Sequence[ClipRef],
    resolution: tuple[int, int],
) -> Optional[float]:
    if not clips:
        return None
    total = ConfusionCounts()
    for clip in clips:
        sample = dataio.load_clip(manifest, clip, resolution)
        pred = predict_mask(model, sample)
        total = total + confusion_counts(pred.mask, sample.target, sample.ignore)
    return metrics_from_counts(total).f1


def train(
    cfg: TrainConfig,
    manifest: DatasetManifest,
    out_dir: Path | str,
    frame_list: Optional[dict[str, set[int]]] = None,
    progress: Optional[Callable[[str], None]] = None,
) -> TrainResult:
    """Optimize the configured model on the manifest's clips.

    Adam (beta1=0.9, beta2=0.999, eps=1e-8) under the step-decay schedule;
    per-epoch shuffling, validation F1, and checkpoints; deterministic for
    a fixed seed up to the backend's floating-point reduction order. A
    non-finite loss aborts with the offending batch in the message.
    """
    if not manifest.videos:
        raise ValueError("manifest has no videos")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    log_path = out_dir / "log.jsonl"

    clips = dataio.build_clip_index(manifest, cfg.model.T, cfg.frame_stride)
    if frame_list is not None:
        clips = dataio.filter_clips(clips, frame_list)
    if not clips:
        raise ValueError("no annotated clips to train on")
    splitter = dataio.split_train_val_per_video if cfg.split_per_video else dataio.split_train_val
    train_clips, val_clips = splitter(clips, cfg.split_ratio, cfg.seed)
    if set(train_clips) & set(val_clips):
        raise AssertionError("train/val membership audit failed: overlapping clips")

    random.seed(cfg.seed)
    np.random.seed(cfg.seed % 2**32)
    torch.manual_seed(cfg.seed)
    model = build_model(cfg.model)
    params = count_parameters(model)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr0, betas=(0.9, 0.999), eps=1e-8)

    history: list[dict] = []
    best_val: Optional[float] = None
    best_path = ckpt_dir / "best.ckpt"
    last_path = best_path
    step = 0
    stop = False
    with log_path.open("w") as log:

        def emit(record: dict) -> None:
            log.write(json.dumps(record) + "\n")
            history.append(record)

        for epoch in range(cfg.epochs):
            lr = lr_at_epoch(cfg, epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr
            order = list(train_clips)
            random.Random(f"{cfg.seed}:{epoch}").shuffle(order)
            model.train()
            epoch_losses: list[float] = []
            for lo in range(0, len(order), cfg.batch_size):
                batch = order[lo : lo + cfg.batch_size]
                samples = [dataio.load_clip(manifest, c, cfg.resolution) for c in batch]
                frames, targets, ignores = _batch_tensors(samples)
                probs = model(frames)[:, 0]
                loss, degenerate = combined_loss(probs, targets, ignores, cfg.loss)
                if degenerate:
                    continue
                value = loss.detach().item()
                if not math.isfinite(value):
                    raise TrainingAborted(
                        f"non-finite loss {value} at epoch {epoch} step {step} (lr={lr}, "
                        f"batch={[f'{c.video_id}:{c.current_index}' for c in batch]})"
                    )
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                epoch_losses.append(value)
                step += 1
                emit({"epoch": epoch, "step": step, "lr": lr, "loss": value})
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    stop = True
                    break

            val_f1 = _validation_f1(model, manifest, val_clips, cfg.resolution)
            mean_loss = float(np.mean(epoch_losses)) if epoch_losses else None
            emit(
                {
                    "epoch": epoch,
                    "step": step,
                    "lr": lr,
                    "loss": mean_loss,
                    "val_f1": val_f1,
                }
            )
            if progress is not None:
                progress(f"epoch {epoch}: loss={mean_loss} val_f1={val_f1}")
            last_path = ckpt_dir / f"epoch_{epoch:03d}.ckpt"
            save_checkpoint(model, last_path, extra={"epoch": epoch, "step": step})
            if val_f1 is not None and (best_val is None or val_f1 > best_val):
                best_val = val_f1
                shutil.copyfile(last_path, best_path)
            if stop:
                break

    if not best_path.exists():
        # no validation clips: the last checkpoint doubles as best
        shutil.copyfile(last_path, best_path)
    return TrainResult(
        out_dir=out_dir,
        log_path=log_path,
        best_checkpoint=best_path,
        last_checkpoint=last_path,
        best_val_f1=best_val,
        param_count=params,
        history=history,
    )


def evaluate(
    model: torch.nn.Module,
    manifest: DatasetManifest,
    resolution: tuple[int, int],
    frame_stride: int = 1,
    domain: str = "in-domain",
    overall_by: str = "category",
    frame_list: Optional[dict[str, set[int]]] = None,
    progress: Optional[Callable[[str], None]] = None,
) -> MetricsReport:
    """Predict every annotated clip and aggregate confusion counts per
    video. Out-of-domain evaluation is the same call with a manifest from
    a corpus the model was not trained on and domain="ood"."""
    cfg: ModelConfig = model.cfg
    clips = dataio.build_clip_index(manifest, cfg.T, frame_stride)
    if frame_list is not None:
        clips = dataio.filter_clips(clips, frame_list)
    if not clips:
        raise ValueError("no annotated clips to evaluate")
    categories = {v.video_id: v.category for v in manifest.videos}
    rows: list[tuple[str, str, ConfusionCounts]] = []
    for i, clip in enumerate(clips):
        sample = dataio.load_clip(manifest, clip, resolution)
        pred = predict_mask(model, sample)
        rows.append(
            (clip.video_id, categories[clip.video_id], confusion_counts(pred.mask, sample.target, sample.ignore))
        )
        if progress is not None and (i + 1) % 50 == 0:
            progress(f"evaluated {i + 1}/{len(clips)} clips")
    return aggregate_report(rows, domain=domain, overall_by=overall_by)
