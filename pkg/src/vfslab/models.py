"""Model assemblies over the shared blocks.

Three architectures share one forward contract: input is a clip tensor
(B, T, 3, H, W) whose last frame is the supervised one, output is a
probability map (B, 1, H, W).

* ``mustan1``: a context encoder over the channel-stacked window plus a
  current-frame encoder; at each scale the context embedding gates the
  frame embedding, and the decoder refines each skip with its running
  feature through coarse-over-fine gates.
* ``mustan2``: one encoder per window frame (weights shared by default),
  per-scale temporal fusion of the T pyramids, and coarse-over-fine gates
  fed by the current frame's next-coarser embedding.
* ``unet_baseline``: plain encoder-decoder on the current frame only, no
  attention or fusion, the ablation control.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
from torch import Tensor

from .blocks import (
    BlockConfig,
    Decoder,
    Encoder,
    FeatureRefinement,
    FusionBlock,
    LocalizationRefinement,
    load_imagenet_encoder_weights,
)
from .data import ClipSample

ARCHITECTURES = ("mustan1", "mustan2", "unet_baseline")


@dataclass
class ModelConfig:
    arch: str = "mustan2"
    T: int = 3
    width_factor: float = 1.0
    share_mustan2_encoders: bool = True
    pretrained: bool = False
    threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown arch {self.arch!r}, expected one of {ARCHITECTURES}")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must be in (0, 1)")
        BlockConfig(width_factor=self.width_factor)  # validates channel integrality

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "T": self.T,
            "width_factor": self.width_factor,
            "share_mustan2_encoders": self.share_mustan2_encoders,
            "pretrained": self.pretrained,
            "threshold": self.threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class MaskPrediction:
    probabilities: np.ndarray  # (H, W) float32 in [0, 1]
    mask: np.ndarray  # (H, W) uint8 in {0, 1}
    threshold: float


def _check_clip_tensor(frames: Tensor, T: int) -> None:
    if frames.dim() != 5 or frames.shape[2] != 3:
        raise ValueError(f"expected clip tensor (B, T, 3, H, W), got {tuple(frames.shape)}")
    if frames.shape[1] != T:
        raise ValueError(f"window length {frames.shape[1]} does not match model T={T}")


class Mustan1(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        channels = BlockConfig(width_factor=cfg.width_factor).channels()
        self.context_encoder = Encoder(BlockConfig(cfg.width_factor, in_channels=3 * cfg.T))
        self.frame_encoder = Encoder(BlockConfig(cfg.width_factor, in_channels=3))
        self.refiners = nn.ModuleList(FeatureRefinement(c) for c in channels)
        gates = [
            LocalizationRefinement(channels[4], channels[3]),
            LocalizationRefinement(channels[3], channels[2]),
            LocalizationRefinement(channels[2], channels[1]),
            LocalizationRefinement(channels[1], channels[0]),
        ]
        self.decoder = Decoder(channels, skip_gates=gates)
        if cfg.pretrained:
            load_imagenet_encoder_weights(self.frame_encoder)
            if cfg.T == 1:
                load_imagenet_encoder_weights(self.context_encoder)

    def forward(self, frames: Tensor) -> Tensor:
        _check_clip_tensor(frames, self.cfg.T)
        b, t, _, h, w = frames.shape
        context = self.context_encoder(frames.reshape(b, 3 * t, h, w))
        current = self.frame_encoder(frames[:, -1])
        refined = [gate(c, f) for gate, c, f in zip(self.refiners, context, current)]
        return self.decoder(refined[4], [refined[3], refined[2], refined[1], refined[0]])


class Mustan2(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        channels = BlockConfig(width_factor=cfg.width_factor).channels()
        if cfg.share_mustan2_encoders:
            self.encoders = nn.ModuleList([Encoder(BlockConfig(cfg.width_factor, in_channels=3))])
        else:
            self.encoders = nn.ModuleList(
                Encoder(BlockConfig(cfg.width_factor, in_channels=3)) for _ in range(cfg.T)
            )
        self.fusions = nn.ModuleList(FusionBlock(c, cfg.T) for c in channels)
        self.refiners = nn.ModuleList(
            [
                LocalizationRefinement(channels[4], channels[3]),
                LocalizationRefinement(channels[3], channels[2]),
                LocalizationRefinement(channels[2], channels[1]),
                LocalizationRefinement(channels[1], channels[0]),
            ]
        )
        self.decoder = Decoder(channels)
        if cfg.pretrained:
            for enc in self.encoders:
                load_imagenet_encoder_weights(enc)

    def _encoder_for(self, t: int) -> Encoder:
        return self.encoders[0] if self.cfg.share_mustan2_encoders else self.encoders[t]

    def forward(self, frames: Tensor) -> Tensor:
        _check_clip_tensor(frames, self.cfg.T)
        pyramids = [self._encoder_for(t)(frames[:, t]) for t in range(self.cfg.T)]
        fused = [fb([p[i] for p in pyramids]) for i, fb in enumerate(self.fusions)]
        current = pyramids[-1]
        skips = [
            self.refiners[0](current[4], fused[3]),
            self.refiners[1](current[3], fused[2]),
            self.refiners[2](current[2], fused[1]),
            self.refiners[3](current[1], fused[0]),
        ]
        return self.decoder(fused[4], skips)


class UnetBaseline(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        channels = BlockConfig(width_factor=cfg.width_factor).channels()
        self.encoder = Encoder(BlockConfig(cfg.width_factor, in_channels=3))
        self.decoder = Decoder(channels)
        if cfg.pretrained:
            load_imagenet_encoder_weights(self.encoder)

    def forward(self, frames: Tensor) -> Tensor:
        _check_clip_tensor(frames, self.cfg.T)
        f = self.encoder(frames[:, -1])
        return self.decoder(f[4], [f[3], f[2], f[1], f[0]])


_ARCH_CLASSES = {"mustan1": Mustan1, "mustan2": Mustan2, "unet_baseline": UnetBaseline}


def build_model(cfg: ModelConfig) -> nn.Module:
    return _ARCH_CLASSES[cfg.arch](cfg)


def predict_mask(model: nn.Module, clip: ClipSample, device: str = "cpu") -> MaskPrediction:
    """Run one clip through a model and threshold the probability map
    (ties go to foreground: mask = p >= threshold)."""
    cfg: ModelConfig = model.cfg
    if clip.frames.shape[0] != cfg.T:
        raise ValueError(f"clip window length {clip.frames.shape[0]} does not match model T={cfg.T}")
    x = torch.from_numpy(clip.frames).permute(0, 3, 1, 2).unsqueeze(0).to(device)
    model.eval()
    with torch.no_grad():
        p = model(x)[0, 0].cpu().numpy().astype(np.float32)
    return MaskPrediction(
        probabilities=p,
        mask=(p >= cfg.threshold).astype(np.uint8),
        threshold=cfg.threshold,
    )


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
