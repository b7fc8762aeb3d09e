"""Confusion-count accumulation and precision/recall/specificity/F1 reporting.

Counts are accumulated over valid (non-ignored) pixels. Aggregation sums
counts per video, then takes unweighted means of per-video metrics within
each category, then an unweighted mean across categories for the overall
row (a video-mean overall is available via ``overall_by="video"``).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Optional

import numpy as np


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )

    @property
    def valid_total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


class Metrics(NamedTuple):
    precision: float
    recall: float
    specificity: float
    f1: float


def confusion_counts(
    pred: np.ndarray, target: np.ndarray, ignore: Optional[np.ndarray] = None
) -> ConfusionCounts:
    """Tally TP/FP/FN/TN between binary maps over pixels with ignore == 0."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"pred shape {pred.shape} != target shape {target.shape}")
    if ignore is None:
        valid = np.ones(pred.shape, dtype=bool)
    else:
        ignore = np.asarray(ignore)
        if ignore.shape != pred.shape:
            raise ValueError(f"ignore shape {ignore.shape} != pred shape {pred.shape}")
        valid = ignore == 0
    p = (pred != 0) & valid
    t = (target != 0) & valid
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t & valid))
    fn = int(np.count_nonzero(~p & t & valid))
    tn = int(np.count_nonzero(~p & ~t & valid))
    return ConfusionCounts(tp, fp, fn, tn)


def _safe_ratio(num: int, den: int, complementary_error: int) -> float:
    # Degenerate denominator: 1.0 when the complementary error count is
    # also zero (nothing to find / nothing predicted and none missed),
    # 0.0 otherwise.
    if den == 0:
        return 1.0 if complementary_error == 0 else 0.0
    return num / den


def metrics_from_counts(c: ConfusionCounts) -> Metrics:
    pr = _safe_ratio(c.tp, c.tp + c.fp, c.fn)
    re = _safe_ratio(c.tp, c.tp + c.fn, c.fp)
    sp = _safe_ratio(c.tn, c.tn + c.fp, c.fn)
    f1 = 0.0 if pr + re == 0 else 2.0 * pr * re / (pr + re)
    return Metrics(pr, re, sp, f1)


def _mean_metrics(values: Iterable[Metrics]) -> Metrics:
    rows = list(values)
    if not rows:
        raise ValueError("cannot average an empty metric list")
    arr = np.array(rows, dtype=float)
    return Metrics(*arr.mean(axis=0))


@dataclass
class MetricsReport:
    per_video: dict[str, Metrics]
    per_category: dict[str, Metrics]
    overall: Metrics
    counts: dict[str, ConfusionCounts]
    video_categories: dict[str, str]
    domain: str = "in-domain"
    overall_by: str = "category"

    def to_dict(self) -> dict:
        return {
            "domain": self.domain,
            "overall_by": self.overall_by,
            "overall": self.overall._asdict(),
            "per_category": {k: m._asdict() for k, m in self.per_category.items()},
            "per_video": {k: m._asdict() for k, m in self.per_video.items()},
            "video_categories": dict(self.video_categories),
            "counts": {k: c.to_dict() for k, c in self.counts.items()},
        }

    def to_json(self, path: Path | str) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def from_json(cls, path: Path | str) -> "MetricsReport":
        d = json.loads(Path(path).read_text())
        return cls(
            per_video={k: Metrics(**m) for k, m in d["per_video"].items()},
            per_category={k: Metrics(**m) for k, m in d["per_category"].items()},
            overall=Metrics(**d["overall"]),
            counts={k: ConfusionCounts(**c) for k, c in d["counts"].items()},
            video_categories=d["video_categories"],
            domain=d.get("domain", "in-domain"),
            overall_by=d.get("overall_by", "category"),
        )


def aggregate_report(
    per_frame: Iterable[tuple[str, str, ConfusionCounts]],
    domain: str = "in-domain",
    overall_by: str = "category",
) -> MetricsReport:
    """Sum per-frame counts per video and roll up to category and overall means.

    per_frame yields (video_id, category, counts) triples; an empty input
    is an error. overall_by selects whether the overall row averages the
    per-category means (default) or the per-video metrics directly.
    """
    if overall_by not in ("category", "video"):
        raise ValueError(f"overall_by must be 'category' or 'video', got {overall_by!r}")
    totals: dict[str, ConfusionCounts] = {}
    categories: dict[str, str] = {}
    for video_id, category, counts in per_frame:
        totals[video_id] = totals.get(video_id, ConfusionCounts()) + counts
        categories.setdefault(video_id, category)
    if not totals:
        raise ValueError("empty report: no per-frame counts supplied")

    per_video = {vid: metrics_from_counts(c) for vid, c in totals.items()}
    by_category: dict[str, list[Metrics]] = {}
    for vid, m in per_video.items():
        by_category.setdefault(categories[vid], []).append(m)
    per_category = {cat: _mean_metrics(ms) for cat, ms in sorted(by_category.items())}
    if overall_by == "category":
        overall = _mean_metrics(per_category.values())
    else:
        overall = _mean_metrics(per_video.values())
    return MetricsReport(
        per_video=per_video,
        per_category=per_category,
        overall=overall,
        counts=totals,
        video_categories=categories,
        domain=domain,
        overall_by=overall_by,
    )


def report_to_csv(report: MetricsReport, path: Path | str) -> Path:
    """One row per video and per category, plus the overall row."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["kind", "name", "category", "domain",
             "precision", "recall", "specificity", "f1", "tp", "fp", "fn", "tn"]
        )
        for vid in sorted(report.per_video):
            m = report.per_video[vid]
            c = report.counts[vid]
            w.writerow(
                ["video", vid, report.video_categories[vid], report.domain,
                 f"{m.precision:.6f}", f"{m.recall:.6f}", f"{m.specificity:.6f}", f"{m.f1:.6f}",
                 c.tp, c.fp, c.fn, c.tn]
            )
        for cat, m in report.per_category.items():
            w.writerow(
                ["category", cat, cat, report.domain,
                 f"{m.precision:.6f}", f"{m.recall:.6f}", f"{m.specificity:.6f}", f"{m.f1:.6f}",
                 "", "", "", ""]
            )
        m = report.overall
        w.writerow(
            ["overall", "overall", "", report.domain,
             f"{m.precision:.6f}", f"{m.recall:.6f}", f"{m.specificity:.6f}", f"{m.f1:.6f}",
             "", "", "", ""]
        )
    return path


def render_table(report: MetricsReport, per_video: bool = True) -> str:
    """Human-readable per-category table with an Avg. row, optionally
    followed by the per-video breakdown."""
    lines = [f"domain: {report.domain}"]
    header = f"{'category':<20} {'videos':>6} {'Pr':>8} {'Re':>8} {'Sp':>8} {'F1':>8}"
    lines.append(header)
    lines.append("-" * len(header))
    videos_per_cat: dict[str, int] = {}
    for vid in report.per_video:
        cat = report.video_categories[vid]
        videos_per_cat[cat] = videos_per_cat.get(cat, 0) + 1
    for cat, m in report.per_category.items():
        lines.append(
            f"{cat:<20} {videos_per_cat[cat]:>6} "
            f"{m.precision:>8.4f} {m.recall:>8.4f} {m.specificity:>8.4f} {m.f1:>8.4f}"
        )
    lines.append("-" * len(header))
    m = report.overall
    lines.append(
        f"{'Avg.':<20} {len(report.per_video):>6} "
        f"{m.precision:>8.4f} {m.recall:>8.4f} {m.specificity:>8.4f} {m.f1:>8.4f}"
    )
    if per_video:
        lines.append("")
        vheader = f"{'video':<24} {'category':<16} {'Pr':>8} {'Re':>8} {'Sp':>8} {'F1':>8}"
        lines.append(vheader)
        lines.append("-" * len(vheader))
        for vid in sorted(report.per_video):
            m = report.per_video[vid]
            lines.append(
                f"{vid:<24} {report.video_categories[vid]:<16} "
                f"{m.precision:>8.4f} {m.recall:>8.4f} {m.specificity:>8.4f} {m.f1:>8.4f}"
            )
    return "\n".join(lines) + "\n"
