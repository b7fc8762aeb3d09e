"""Dataset discovery, ground-truth decoding, temporal clip indexing and
train/val splitting.

Two on-disk layouts are supported:

* change-detection layout: ``<root>/<category>/<video>/input/in%06d.jpg``
  with ``groundtruth/gt%06d.png``, an optional ``temporalROI.txt`` (two
  whitespace-separated 1-based frame numbers) and an optional ``ROI``
  image (zero pixels are excluded from loss and metrics);
* simple layout: ``<root>/<video>/frames/%06d.png`` aligned with
  ``<root>/<video>/masks/%06d.png`` (the toy generator's output).

Clip windows are causal: T frame indices spaced ``frame_stride`` apart
ending at the supervised frame, clamped at the first frame so every
annotated frame is usable. All indices inside ClipRef are 0-based
positions into a video's frame list; temporal_roi keeps the 1-based
convention of the file it was parsed from.
"""

from __future__ import annotations

import json
import math
import random
import re
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image


class DatasetError(Exception):
    pass


class LayoutError(DatasetError):
    pass


class AlignmentError(DatasetError):
    pass


class LabelDecodeError(DatasetError):
    pass


# Ground-truth gray levels of the change-detection encoding.
LABEL_STATIC = 0
LABEL_SHADOW = 50
LABEL_OUTSIDE_ROI = 85
LABEL_UNKNOWN = 170
LABEL_FOREGROUND = 255
KNOWN_LABEL_VALUES = frozenset({LABEL_STATIC, LABEL_SHADOW, LABEL_OUTSIDE_ROI, LABEL_UNKNOWN, LABEL_FOREGROUND})


@dataclass
class VideoEntry:
    video_id: str
    category: str
    frame_paths: list[Path]
    annotation_paths: list[Optional[Path]]
    roi_path: Optional[Path] = None
    temporal_roi: Optional[tuple[int, int]] = None

    def __post_init__(self) -> None:
        if len(self.annotation_paths) != len(self.frame_paths):
            raise AlignmentError(
                f"video {self.video_id!r}: {len(self.annotation_paths)} annotations for "
                f"{len(self.frame_paths)} frames"
            )
        if self.temporal_roi is not None:
            first, last = self.temporal_roi
            if not (1 <= first <= last <= len(self.frame_paths)):
                raise LayoutError(
                    f"video {self.video_id!r}: temporal ROI {self.temporal_roi} outside "
                    f"[1, {len(self.frame_paths)}]"
                )

    @property
    def n_frames(self) -> int:
        return len(self.frame_paths)

    def annotated_indices(self) -> list[int]:
        """0-based indices of annotated frames, restricted to the temporal
        ROI when one is present."""
        lo, hi = 0, self.n_frames - 1
        if self.temporal_roi is not None:
            lo, hi = self.temporal_roi[0] - 1, self.temporal_roi[1] - 1
        return [i for i in range(lo, hi + 1) if self.annotation_paths[i] is not None]


@dataclass
class DatasetManifest:
    videos: list[VideoEntry]
    layout_kind: str
    root: Path

    def get_video(self, video_id: str) -> VideoEntry:
        for v in self.videos:
            if v.video_id == video_id:
                return v
        raise KeyError(f"unknown video {video_id!r}")

    def to_json(self, path: Path | str) -> Path:
        path = Path(path)
        payload = {
            "layout_kind": self.layout_kind,
            "root": str(self.root),
            "videos": [
                {
                    "video_id": v.video_id,
                    "category": v.category,
                    "frame_paths": [str(p) for p in v.frame_paths],
                    "annotation_paths": [None if p is None else str(p) for p in v.annotation_paths],
                    "roi_path": None if v.roi_path is None else str(v.roi_path),
                    "temporal_roi": v.temporal_roi,
                }
                for v in self.videos
            ],
        }
        path.write_text(json.dumps(payload, indent=2) + "\n")
        return path

    @classmethod
    def from_json(cls, path: Path | str) -> "DatasetManifest":
        d = json.loads(Path(path).read_text())
        videos = [
            VideoEntry(
                video_id=v["video_id"],
                category=v["category"],
                frame_paths=[Path(p) for p in v["frame_paths"]],
                annotation_paths=[None if p is None else Path(p) for p in v["annotation_paths"]],
                roi_path=None if v.get("roi_path") is None else Path(v["roi_path"]),
                temporal_roi=None if v.get("temporal_roi") is None else tuple(v["temporal_roi"]),
            )
            for v in d["videos"]
        ]
        return cls(videos=videos, layout_kind=d["layout_kind"], root=Path(d["root"]))


@dataclass(frozen=True)
class ClipRef:
    video_id: str
    current_index: int
    window_indices: tuple[int, ...]


@dataclass
class ClipSample:
    frames: np.ndarray  # (T, H, W, 3) float32 in [0, 1]
    target: np.ndarray  # (H, W) uint8 in {0, 1}
    ignore: np.ndarray  # (H, W) uint8 in {0, 1}, 1 = excluded
    meta: ClipRef


_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def _frame_number(path: Path) -> int:
    m = re.search(r"(\d+)$", path.stem)
    if m is None:
        raise LayoutError(f"cannot parse a frame number from {path.name!r}")
    return int(m.group(1))


def _image_files(directory: Path) -> list[Path]:
    return sorted(
        (p for p in directory.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES),
        key=_frame_number,
    )


def scan_cdnet(root: Path | str) -> DatasetManifest:
    """Scan a change-detection layout tree into a manifest.

    Annotations are aligned to frames by their trailing frame numbers;
    frames without a matching ground-truth file get a None annotation.
    An unreadable ROI image is demoted to a warning.
    """
    root = Path(root)
    videos: list[VideoEntry] = []
    categories = sorted((p for p in root.iterdir() if p.is_dir()), key=lambda p: p.name) if root.is_dir() else []
    for cat_dir in categories:
        for video_dir in sorted((p for p in cat_dir.iterdir() if p.is_dir()), key=lambda p: p.name):
            vid = f"{cat_dir.name}/{video_dir.name}"
            input_dir = video_dir / "input"
            gt_dir = video_dir / "groundtruth"
            if not input_dir.is_dir():
                raise LayoutError(f"video {vid!r}: missing 'input' directory")
            if not gt_dir.is_dir():
                raise LayoutError(f"video {vid!r}: missing 'groundtruth' directory")
            frames = _image_files(input_dir)
            if not frames:
                raise LayoutError(f"video {vid!r}: empty 'input' directory")
            by_number = {_frame_number(p): p for p in _image_files(gt_dir)}
            annotations = [by_number.get(_frame_number(p)) for p in frames]
            if all(a is None for a in annotations):
                raise LayoutError(f"video {vid!r}: no annotated frames")

            temporal_roi = None
            troi = video_dir / "temporalROI.txt"
            if troi.is_file():
                parts = troi.read_text().split()
                if len(parts) < 2:
                    raise LayoutError(f"video {vid!r}: malformed temporalROI.txt")
                temporal_roi = (int(parts[0]), int(parts[1]))

            roi_path = None
            for cand in sorted(video_dir.glob("ROI.*")):
                try:
                    with Image.open(cand) as im:
                        im.load()
                    roi_path = cand
                    break
                except Exception as exc:
                    warnings.warn(f"video {vid!r}: unreadable ROI file {cand.name}: {exc}")
            videos.append(
                VideoEntry(
                    video_id=vid,
                    category=cat_dir.name,
                    frame_paths=frames,
                    annotation_paths=annotations,
                    roi_path=roi_path,
                    temporal_roi=temporal_roi,
                )
            )
    return DatasetManifest(videos=videos, layout_kind="cdnet", root=root)


def scan_simple(root: Path | str) -> DatasetManifest:
    """Scan a simple layout tree (per-video frames/ and masks/ directories)."""
    root = Path(root)
    videos: list[VideoEntry] = []
    candidates = sorted((p for p in root.iterdir() if p.is_dir()), key=lambda p: p.name) if root.is_dir() else []
    for video_dir in candidates:
        vid = video_dir.name
        frames_dir = video_dir / "frames"
        masks_dir = video_dir / "masks"
        if not frames_dir.is_dir() or not masks_dir.is_dir():
            raise LayoutError(f"video {vid!r}: expected 'frames' and 'masks' directories")
        frames = _image_files(frames_dir)
        masks = _image_files(masks_dir)
        if len(frames) != len(masks):
            raise AlignmentError(f"video {vid!r}: {len(frames)} frames but {len(masks)} masks")
        if not frames:
            raise LayoutError(f"video {vid!r}: empty 'frames' directory")
        videos.append(
            VideoEntry(
                video_id=vid,
                category=vid,
                frame_paths=frames,
                annotation_paths=list(masks),
            )
        )
    return DatasetManifest(videos=videos, layout_kind="simple", root=root)


def scan_dataset(root: Path | str, layout: str = "auto") -> DatasetManifest:
    """Dispatch to the right scanner; 'auto' sniffs for input/groundtruth
    subdirectories two levels down."""
    root = Path(root)
    if layout == "cdnet":
        return scan_cdnet(root)
    if layout == "simple":
        return scan_simple(root)
    if layout != "auto":
        raise ValueError(f"unknown layout {layout!r}")
    if root.is_dir():
        for cat in root.iterdir():
            if not cat.is_dir():
                continue
            for video in cat.iterdir():
                if video.is_dir() and (video / "input").is_dir():
                    return scan_cdnet(root)
            if (cat / "frames").is_dir():
                return scan_simple(root)
    return scan_simple(root)


def decode_cdnet_label(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Decode a change-detection ground-truth image into (target, ignore).

    255 is foreground; 0 and 50 background; 85 and 170 are excluded
    pixels. Any other value raises."""
    arr = np.asarray(image)
    values = np.unique(arr)
    bad = [int(v) for v in values if int(v) not in KNOWN_LABEL_VALUES]
    if bad:
        raise LabelDecodeError(
            f"unknown label values {bad} (expected subset of {sorted(KNOWN_LABEL_VALUES)})"
        )
    target = (arr == LABEL_FOREGROUND).astype(np.uint8)
    ignore = ((arr == LABEL_OUTSIDE_ROI) | (arr == LABEL_UNKNOWN)).astype(np.uint8)
    return target, ignore


def build_clip_index(manifest: DatasetManifest, T: int, frame_stride: int = 1) -> list[ClipRef]:
    """One ClipRef per annotated frame; windows are clamped at frame 0."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if frame_stride < 1:
        raise ValueError(f"frame_stride must be >= 1, got {frame_stride}")
    clips: list[ClipRef] = []
    for video in manifest.videos:
        for current in video.annotated_indices():
            window = tuple(
                max(0, current - (T - 1 - j) * frame_stride) for j in range(T)
            )
            clips.append(ClipRef(video.video_id, current, window))
    return clips


def _open_image(path: Path) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
        return img
    except Exception as exc:
        raise OSError(f"failed to read image {path}: {exc}") from exc


def _check_resolution(out_hw: tuple[int, int]) -> None:
    h, w = out_hw
    if h % 32 != 0 or w % 32 != 0:
        raise ValueError(f"output resolution must be divisible by 32, got {out_hw}")


def _resize_mask(arr: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    h, w = out_hw
    if arr.shape == (h, w):
        return arr
    img = Image.fromarray(arr)
    return np.asarray(img.resize((w, h), Image.NEAREST))


def load_clip(manifest: DatasetManifest, clip: ClipRef, out_hw: tuple[int, int]) -> ClipSample:
    """Load, resize and normalize one clip: RGB frames bilinearly, masks
    with nearest-neighbor so they stay binary."""
    _check_resolution(out_hw)
    h, w = out_hw
    video = manifest.get_video(clip.video_id)

    frames = np.empty((len(clip.window_indices), h, w, 3), dtype=np.float32)
    for k, idx in enumerate(clip.window_indices):
        img = _open_image(video.frame_paths[idx]).convert("RGB")
        if img.size != (w, h):
            img = img.resize((w, h), Image.BILINEAR)
        frames[k] = np.asarray(img, dtype=np.float32) / 255.0

    ann_path = video.annotation_paths[clip.current_index]
    if ann_path is None:
        raise AlignmentError(
            f"clip at {clip.video_id!r} frame {clip.current_index} has no annotation"
        )
    label = np.asarray(_open_image(ann_path).convert("L"))
    if manifest.layout_kind == "cdnet":
        target, ignore = decode_cdnet_label(label)
    else:
        target = (label > 127).astype(np.uint8)
        ignore = np.zeros_like(target)
    target = _resize_mask(target, out_hw)
    ignore = _resize_mask(ignore, out_hw)

    if video.roi_path is not None:
        roi = np.asarray(_open_image(video.roi_path).convert("L"))
        roi = _resize_mask((roi > 127).astype(np.uint8), out_hw)
        ignore = np.maximum(ignore, (roi == 0).astype(np.uint8))
    return ClipSample(frames=frames, target=target, ignore=ignore, meta=clip)


def split_train_val(
    clips: Sequence[ClipRef], ratio: float, seed: int
) -> tuple[list[ClipRef], list[ClipRef]]:
    """Seeded shuffle then split; train size is round(ratio * N) with
    half-up rounding. Returns a partition of the input."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    shuffled = list(clips)
    random.Random(seed).shuffle(shuffled)
    n_train = int(math.floor(ratio * len(shuffled) + 0.5))
    return shuffled[:n_train], shuffled[n_train:]


def split_train_val_per_video(
    clips: Sequence[ClipRef], ratio: float, seed: int
) -> tuple[list[ClipRef], list[ClipRef]]:
    """Same split applied independently inside each video."""
    by_video: dict[str, list[ClipRef]] = {}
    for c in clips:
        by_video.setdefault(c.video_id, []).append(c)
    train: list[ClipRef] = []
    val: list[ClipRef] = []
    for vid in sorted(by_video):
        t, v = split_train_val(by_video[vid], ratio, seed)
        train.extend(t)
        val.extend(v)
    return train, val


def load_frame_list(path: Path | str) -> dict[str, set[int]]:
    """Parse an explicit frame-list file: lines of 'video_id frame_number'
    with 1-based frame numbers; '#' starts a comment."""
    result: dict[str, set[int]] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"malformed frame-list line: {raw!r}")
        result.setdefault(parts[0], set()).add(int(parts[1]))
    return result


def filter_clips(clips: Sequence[ClipRef], frame_list: dict[str, set[int]]) -> list[ClipRef]:
    """Keep clips whose supervised frame (1-based) appears in the list."""
    return [c for c in clips if c.current_index + 1 in frame_list.get(c.video_id, ())]
