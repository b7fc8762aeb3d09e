"""Procedural toy surveillance videos: textured sprites moving over
parametric backgrounds, with per-frame binary masks and instance maps.

Everything is a pure function of the scene spec and its seed. Sprite
positions are rounded to integer pixels and wrap at the borders, so each
sprite always contributes its full footprint; the mask is exactly the set
of rendered sprite pixels and the instance map stores sprite index + 1
(higher z order wins on overlap). Night lighting multiplies RGB by 0.35
and never touches masks.
"""

from __future__ import annotations

import json
import math
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

BACKGROUNDS = ("flat_color", "gradient", "checker", "noise_flicker")
LIGHTINGS = ("day", "night")
SPRITE_SHAPES = ("rect", "ellipse")
TRAJECTORIES = ("linear", "sinusoidal")
TEXTURES = ("solid", "striped")

NIGHT_FACTOR = 0.35


@dataclass
class SpriteSpec:
    """One moving sprite. start is the integer top-left corner at t=0 and
    the sprite must fit inside the frame there; velocity is pixels/frame.
    A sinusoidal trajectory adds wobble_amp * sin(2*pi*t / wobble_period)
    to the horizontal position on top of the linear motion."""

    shape: str = "rect"
    size: tuple[int, int] = (10, 10)
    start: tuple[float, float] = (0.0, 0.0)
    velocity: tuple[float, float] = (1.0, 1.0)
    trajectory: str = "linear"
    wobble_amp: float = 0.0
    wobble_period: float = 24.0
    texture: str = "solid"
    stripe_width: int = 3
    color: tuple[int, int, int] = (220, 60, 60)
    color2: tuple[int, int, int] = (245, 245, 245)
    z_order: int = 0

    def __post_init__(self) -> None:
        if self.shape not in SPRITE_SHAPES:
            raise ValueError(f"unknown sprite shape {self.shape!r}")
        if self.trajectory not in TRAJECTORIES:
            raise ValueError(f"unknown trajectory {self.trajectory!r}")
        if self.texture not in TEXTURES:
            raise ValueError(f"unknown texture {self.texture!r}")
        if self.size[0] < 1 or self.size[1] < 1:
            raise ValueError("sprite size must be >= 1 pixel per side")
        if not all(math.isfinite(v) for v in self.velocity):
            raise ValueError("sprite velocity must be finite")
        if self.stripe_width < 1:
            raise ValueError("stripe_width must be >= 1")


@dataclass
class SceneSpec:
    size: tuple[int, int] = (64, 96)
    num_frames: int = 30
    background: str = "flat_color"
    lighting: str = "day"
    camera_jitter: float = 0.0
    sprites: list[SpriteSpec] = field(default_factory=list)
    seed: int = 0
    name: Optional[str] = None

    def __post_init__(self) -> None:
        h, w = self.size
        if h % 32 != 0 or w % 32 != 0:
            raise ValueError(f"scene size must be divisible by 32, got {self.size}")
        if self.num_frames < 1:
            raise ValueError("num_frames must be >= 1")
        if self.background not in BACKGROUNDS:
            raise ValueError(f"unknown background {self.background!r}")
        if self.lighting not in LIGHTINGS:
            raise ValueError(f"unknown lighting {self.lighting!r}")
        if self.camera_jitter < 0:
            raise ValueError("camera_jitter must be >= 0")
        for sp in self.sprites:
            sh, sw = sp.size
            y0, x0 = sp.start
            if not (0 <= y0 and y0 + sh <= h and 0 <= x0 and x0 + sw <= w):
                raise ValueError(f"sprite does not fit inside the frame at t=0: {sp}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["size"] = tuple(d["size"])
        sprites = []
        for s in d.get("sprites", []):
            s = dict(s)
            for key in ("size", "start", "velocity", "color", "color2"):
                if key in s:
                    s[key] = tuple(s[key])
            sprites.append(SpriteSpec(**s))
        d["sprites"] = sprites
        return cls(**d)


def _sprite_footprint(sp: SpriteSpec, scale: int = 1) -> np.ndarray:
    """Boolean footprint on the integer grid. A pixel is on when its
    center lies inside the shape, which keeps the footprint independent
    of the sprite's position."""
    h, w = sp.size[0] * scale, sp.size[1] * scale
    if sp.shape == "rect":
        return np.ones((h, w), dtype=bool)
    rr = (np.arange(h) + 0.5 - h / 2.0) / (h / 2.0)
    cc = (np.arange(w) + 0.5 - w / 2.0) / (w / 2.0)
    return rr[:, None] ** 2 + cc[None, :] ** 2 <= 1.0


def _sprite_colors(sp: SpriteSpec, scale: int = 1) -> np.ndarray:
    h, w = sp.size[0] * scale, sp.size[1] * scale
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[...] = sp.color
    if sp.texture == "striped":
        cols = (np.arange(w) // (sp.stripe_width * scale)) % 2 == 1
        img[:, cols] = sp.color2
    return img


def sprite_position(sp: SpriteSpec, t: int) -> tuple[float, float]:
    y = sp.start[0] + sp.velocity[0] * t
    x = sp.start[1] + sp.velocity[1] * t
    if sp.trajectory == "sinusoidal":
        x += sp.wobble_amp * math.sin(2.0 * math.pi * t / sp.wobble_period)
    return y, x


def _build_background(spec: SceneSpec, rng: np.random.Generator) -> tuple[np.ndarray, dict]:
    h, w = spec.size
    if spec.background == "flat_color":
        color = rng.integers(40, 216, size=3)
        base = np.empty((h, w, 3), dtype=np.uint8)
        base[...] = color
        return base, {}
    if spec.background == "gradient":
        c0 = rng.integers(20, 128, size=3).astype(np.float64)
        c1 = rng.integers(128, 236, size=3).astype(np.float64)
        tcol = np.linspace(0.0, 1.0, w)[:, None]
        row = (c0[None, :] * (1 - tcol) + c1[None, :] * tcol).round().astype(np.uint8)
        return np.broadcast_to(row[None, :, :], (h, w, 3)).copy(), {}
    if spec.background == "checker":
        cell = int(rng.integers(4, 13))
        ca = rng.integers(30, 128, size=3)
        cb = rng.integers(128, 226, size=3)
        ys = (np.arange(h) // cell)[:, None]
        xs = (np.arange(w) // cell)[None, :]
        parity = (ys + xs) % 2 == 0
        base = np.where(parity[..., None], ca[None, None, :], cb[None, None, :]).astype(np.uint8)
        return base, {}
    # noise_flicker: static base color, per-frame pixel noise added later
    color = rng.integers(70, 186, size=3)
    base = np.empty((h, w, 3), dtype=np.uint8)
    base[...] = color
    amp = int(rng.integers(20, 46))
    return base, {"noise_amp": amp}


def generate_toy_video(
    spec: SceneSpec,
) -> tuple[list[np.ndarray], list[np.ndarray], list[np.ndarray]]:
    """Render a scene spec into per-frame (RGB uint8, mask {0,1}, instance
    map) lists. Deterministic for a fixed spec."""
    h, w = spec.size
    rng = np.random.default_rng(spec.seed)
    base, extras = _build_background(spec, rng)
    # Independent child streams so lighting or sprite count changes never
    # shift the jitter/noise sequences of an otherwise identical seed.
    jitter_rng = np.random.default_rng((spec.seed, 1))
    noise_rng = np.random.default_rng((spec.seed, 2))

    order = sorted(range(len(spec.sprites)), key=lambda i: (spec.sprites[i].z_order, i))
    footprints = [_sprite_footprint(sp) for sp in spec.sprites]
    colors = [_sprite_colors(sp) for sp in spec.sprites]

    frames: list[np.ndarray] = []
    masks: list[np.ndarray] = []
    instance_maps: list[np.ndarray] = []
    for t in range(spec.num_frames):
        if spec.camera_jitter > 0:
            jy = int(round(float(jitter_rng.uniform(-spec.camera_jitter, spec.camera_jitter))))
            jx = int(round(float(jitter_rng.uniform(-spec.camera_jitter, spec.camera_jitter))))
        else:
            jy = jx = 0
        frame = np.roll(base, (jy, jx), axis=(0, 1)).copy()
        if spec.background == "noise_flicker":
            amp = extras["noise_amp"]
            noise = noise_rng.integers(-amp, amp + 1, size=(h, w, 3))
            frame = np.clip(frame.astype(np.int16) + noise, 0, 255).astype(np.uint8)
        instance = np.zeros((h, w), dtype=np.uint8)
        for i in order:
            sp = spec.sprites[i]
            y, x = sprite_position(sp, t)
            iy = int(round(y)) + jy
            ix = int(round(x)) + jx
            rows = (iy + np.arange(sp.size[0])) % h
            cols = (ix + np.arange(sp.size[1])) % w
            fp = footprints[i]
            rr = np.broadcast_to(rows[:, None], fp.shape)[fp]
            cc = np.broadcast_to(cols[None, :], fp.shape)[fp]
            frame[rr, cc] = colors[i][fp]
            instance[rr, cc] = i + 1
        if spec.lighting == "night":
            frame = (frame.astype(np.float32) * NIGHT_FACTOR).round().astype(np.uint8)
        frames.append(frame)
        masks.append((instance > 0).astype(np.uint8))
        instance_maps.append(instance)
    return frames, masks, instance_maps


def sample_scene_spec(
    rng: np.random.Generator,
    size: tuple[int, int] = (64, 96),
    num_frames: int = 30,
    backgrounds: tuple[str, ...] = BACKGROUNDS,
    lightings: tuple[str, ...] = ("day",),
    camera_jitter: float = 0.0,
    sprite_count: tuple[int, int] = (1, 3),
    name: Optional[str] = None,
) -> SceneSpec:
    """Draw a random but valid scene spec (random sprites, colors, motion)."""
    h, w = size
    n = int(rng.integers(sprite_count[0], sprite_count[1] + 1))
    sprites = []
    for k in range(n):
        sh = int(rng.integers(8, max(9, min(h // 3, 28))))
        sw = int(rng.integers(8, max(9, min(w // 3, 28))))
        y0 = float(rng.integers(0, h - sh + 1))
        x0 = float(rng.integers(0, w - sw + 1))
        speed = rng.uniform(0.6, 3.0, size=2) * rng.choice([-1.0, 1.0], size=2)
        trajectory = str(rng.choice(TRAJECTORIES))
        sprites.append(
            SpriteSpec(
                shape=str(rng.choice(SPRITE_SHAPES)),
                size=(sh, sw),
                start=(y0, x0),
                velocity=(float(speed[0]), float(speed[1])),
                trajectory=trajectory,
                wobble_amp=float(rng.uniform(1.0, 4.0)) if trajectory == "sinusoidal" else 0.0,
                wobble_period=float(rng.uniform(10.0, 40.0)),
                texture=str(rng.choice(TEXTURES)),
                stripe_width=int(rng.integers(2, 5)),
                color=tuple(int(v) for v in rng.integers(0, 256, size=3)),
                color2=tuple(int(v) for v in rng.integers(0, 256, size=3)),
                z_order=k,
            )
        )
    return SceneSpec(
        size=size,
        num_frames=num_frames,
        background=str(rng.choice(list(backgrounds))),
        lighting=str(rng.choice(list(lightings))),
        camera_jitter=camera_jitter,
        sprites=sprites,
        seed=int(rng.integers(0, 2**31 - 1)),
        name=name,
    )


def write_toyset(specs: list[SceneSpec], out_dir: Path | str, overwrite: bool = False) -> Path:
    """Write one simple-layout video directory per spec (frames/, masks/,
    instances/) plus manifest.json. Refuses an existing non-empty
    directory unless overwrite is set, in which case the directory is
    replaced wholesale so stale files cannot linger. Returns the manifest
    path."""
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        if not overwrite:
            raise FileExistsError(f"output directory {out_dir} is not empty (pass overwrite=True)")
        shutil.rmtree(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, spec in enumerate(specs):
        video_id = spec.name or f"toy{i:03d}"
        vdir = out_dir / video_id
        for sub in ("frames", "masks", "instances"):
            (vdir / sub).mkdir(parents=True, exist_ok=True)
        frames, masks, instances = generate_toy_video(spec)
        for t, (fr, mk, im) in enumerate(zip(frames, masks, instances)):
            Image.fromarray(fr).save(vdir / "frames" / f"{t + 1:06d}.png")
            Image.fromarray(mk * 255).save(vdir / "masks" / f"{t + 1:06d}.png")
            Image.fromarray(im).save(vdir / "instances" / f"{t + 1:06d}.png")
        entries.append({"video_id": video_id, "spec": spec.to_dict()})
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps({"version": 1, "videos": entries}, indent=2) + "\n")
    return manifest_path
