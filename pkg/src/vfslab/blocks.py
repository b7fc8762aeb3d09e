"""Differentiable building blocks: the widened residual encoder, the two
additive attention gates (context-over-frame and coarse-over-fine), the
temporal fusion block and the decoder.

The encoder emits a five-level pyramid at strides {2, 4, 8, 16, 32} with
channels width_factor * {64, 128, 256, 512, 1024}: a 7x7 stride-2 stem,
then four two-block residual stages (the first after a stride-2 max-pool,
the rest stride-2), the last of which keeps 512w and is expanded to 1024w
by a 1x1 projection. With width_factor == 1 the stem and the first three
residual stages have exactly the tensor shapes of stock ResNet18's
conv1/bn1 and layer2-4, so ImageNet weights drop in.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

PYRAMID_WIDTHS = (64, 128, 256, 512, 1024)


@dataclass
class BlockConfig:
    width_factor: float = 1.0
    in_channels: int = 3
    use_pretrained_stem: bool = False

    def __post_init__(self) -> None:
        if self.width_factor <= 0:
            raise ValueError("width_factor must be > 0")
        for base in PYRAMID_WIDTHS:
            scaled = base * self.width_factor
            if abs(scaled - round(scaled)) > 1e-9 or round(scaled) < 1:
                raise ValueError(
                    f"width_factor {self.width_factor} gives non-integral channel count {scaled}"
                )
        if self.in_channels < 1:
            raise ValueError("in_channels must be >= 1")

    def channels(self) -> tuple[int, ...]:
        return tuple(int(round(base * self.width_factor)) for base in PYRAMID_WIDTHS)


def pyramid_channels(width_factor: float) -> tuple[int, ...]:
    return BlockConfig(width_factor=width_factor).channels()


class BasicBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or in_channels != out_channels:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )
        else:
            self.downsample = None

    def forward(self, x: Tensor) -> Tensor:
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


def _stage(in_channels: int, out_channels: int, stride: int) -> nn.Sequential:
    return nn.Sequential(
        BasicBlock(in_channels, out_channels, stride=stride),
        BasicBlock(out_channels, out_channels),
    )


class Encoder(nn.Module):
    """Five-level feature pyramid encoder; forward returns [f1..f5]."""

    def __init__(self, cfg: BlockConfig):
        super().__init__()
        self.cfg = cfg
        c1, c2, c3, c4, c5 = cfg.channels()
        self.conv1 = nn.Conv2d(cfg.in_channels, c1, 7, stride=2, padding=3, bias=False)
        self.bn1 = nn.BatchNorm2d(c1)
        self.relu = nn.ReLU(inplace=True)
        self.maxpool = nn.MaxPool2d(3, stride=2, padding=1)
        self.stage2 = _stage(c1, c2, stride=1)
        self.stage3 = _stage(c2, c3, stride=2)
        self.stage4 = _stage(c3, c4, stride=2)
        self.stage5 = _stage(c4, c4, stride=2)
        self.expand = nn.Sequential(
            nn.Conv2d(c4, c5, 1, bias=False),
            nn.BatchNorm2d(c5),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: Tensor) -> list[Tensor]:
        if x.shape[1] != self.cfg.in_channels:
            raise ValueError(f"expected {self.cfg.in_channels} input channels, got {x.shape[1]}")
        if x.shape[-2] % 32 != 0 or x.shape[-1] % 32 != 0:
            raise ValueError(f"spatial size {tuple(x.shape[-2:])} not divisible by 32")
        f1 = self.relu(self.bn1(self.conv1(x)))
        f2 = self.stage2(self.maxpool(f1))
        f3 = self.stage3(f2)
        f4 = self.stage4(f3)
        f5 = self.expand(self.stage5(f4))
        return [f1, f2, f3, f4, f5]


def load_imagenet_encoder_weights(encoder: Encoder, state_dict: dict | None = None) -> None:
    """Copy ImageNet-trained ResNet18 weights into the encoder's stem and
    first three residual stages (the 512w stage and the 1x1 expansion stay
    at their random init). Requires width_factor == 1 and 3 input
    channels. When state_dict is None the torchvision weights are fetched,
    which needs network access or a local cache."""
    cfg = encoder.cfg
    if cfg.width_factor != 1.0 or cfg.in_channels != 3:
        raise ValueError(
            "pretrained weights need width_factor == 1 and in_channels == 3, "
            f"got width_factor={cfg.width_factor}, in_channels={cfg.in_channels}"
        )
    if state_dict is None:
        try:
            from torchvision.models import ResNet18_Weights, resnet18

            state_dict = resnet18(weights=ResNet18_Weights.IMAGENET1K_V1).state_dict()
        except Exception as exc:
            raise RuntimeError(
                "could not obtain ImageNet ResNet18 weights (torchvision download "
                f"failed: {exc}); pass pretrained=False or provide a state_dict"
            ) from exc
    mapping = {"conv1": "conv1", "bn1": "bn1", "stage2": "layer2", "stage3": "layer3", "stage4": "layer4"}
    own = encoder.state_dict()
    loaded = 0
    for name, tensor in own.items():
        head = name.split(".", 1)[0]
        if head not in mapping:
            continue
        src_name = mapping[head] + name[len(head):]
        if src_name not in state_dict:
            raise RuntimeError(f"pretrained state dict is missing {src_name!r}")
        src = state_dict[src_name]
        if tuple(src.shape) != tuple(tensor.shape):
            raise RuntimeError(
                f"shape mismatch for {name!r}: {tuple(tensor.shape)} vs pretrained {tuple(src.shape)}"
            )
        own[name] = src.clone()
        loaded += 1
    encoder.load_state_dict(own)
    if loaded == 0:
        raise RuntimeError("no pretrained tensors were loaded")


class FeatureRefinement(nn.Module):
    """Additive attention gate: a temporal-context embedding reweights the
    same-scale current-frame embedding through a 1-channel sigmoid map."""

    def __init__(self, channels: int):
        super().__init__()
        self.context_proj = nn.Sequential(nn.Conv2d(channels, channels, 1), nn.BatchNorm2d(channels))
        self.frame_proj = nn.Sequential(nn.Conv2d(channels, channels, 1), nn.BatchNorm2d(channels))
        self.gate = nn.Conv2d(channels, 1, 1)

    def attention_map(self, context_feat: Tensor, frame_feat: Tensor) -> Tensor:
        if context_feat.shape != frame_feat.shape:
            raise ValueError(
                f"shape mismatch: context {tuple(context_feat.shape)} vs frame {tuple(frame_feat.shape)}"
            )
        return torch.sigmoid(self.gate(F.relu(self.context_proj(context_feat) + self.frame_proj(frame_feat))))

    def forward(self, context_feat: Tensor, frame_feat: Tensor) -> Tensor:
        return self.attention_map(context_feat, frame_feat) * frame_feat


class LocalizationRefinement(nn.Module):
    """Coarse-over-fine attention gate: a low-resolution embedding (half
    the spatial size) is upsampled, projected to the fine stream's width
    and gates the high-resolution embedding."""

    def __init__(self, lre_channels: int, hre_channels: int):
        super().__init__()
        self.lre_proj = nn.Sequential(nn.Conv2d(lre_channels, hre_channels, 1), nn.BatchNorm2d(hre_channels))
        self.hre_proj = nn.Sequential(nn.Conv2d(hre_channels, hre_channels, 1), nn.BatchNorm2d(hre_channels))
        self.gate = nn.Conv2d(hre_channels, 1, 1)

    def attention_map(self, lre: Tensor, hre: Tensor) -> Tensor:
        if lre.shape[-2] * 2 != hre.shape[-2] or lre.shape[-1] * 2 != hre.shape[-1]:
            raise ValueError(
                f"low-res size {tuple(lre.shape[-2:])} must be half of high-res {tuple(hre.shape[-2:])}"
            )
        up = F.interpolate(lre, scale_factor=2, mode="bilinear", align_corners=False)
        return torch.sigmoid(self.gate(F.relu(self.lre_proj(up) + self.hre_proj(hre))))

    def forward(self, lre: Tensor, hre: Tensor) -> Tensor:
        return self.attention_map(lre, hre) * hre


class FusionBlock(nn.Module):
    """Concatenate T same-scale feature maps and project back to one map's
    channel count (1x1 conv + BN + ReLU)."""

    def __init__(self, channels: int, T: int):
        super().__init__()
        if T < 1:
            raise ValueError("T must be >= 1")
        self.T = T
        self.fuse = nn.Sequential(
            nn.Conv2d(T * channels, channels, 1),
            nn.BatchNorm2d(channels),
            nn.ReLU(inplace=True),
        )

    def forward(self, feats: list[Tensor]) -> Tensor:
        if len(feats) != self.T:
            raise ValueError(f"expected {self.T} feature maps, got {len(feats)}")
        shape = feats[0].shape
        for f in feats[1:]:
            if f.shape != shape:
                raise ValueError("fusion inputs must share one shape")
        return self.fuse(torch.cat(feats, dim=1))


class Decoder(nn.Module):
    """Four upsample-concat-conv blocks walking the pyramid back to stride
    2, then a final x2 upsample, 1x1 conv and sigmoid.

    skip_gates, when given, holds one coarse-over-fine gate per block;
    each refines its skip with the running decoder feature before the
    upsample-concat (the skips argument then carries the raw maps).
    """

    def __init__(self, channels: tuple[int, ...], skip_gates: list[LocalizationRefinement] | None = None):
        super().__init__()
        c1, c2, c3, c4, c5 = channels
        self.channels = (c1, c2, c3, c4, c5)
        ins = (c5 + c4, c4 + c3, c3 + c2, c2 + c1)
        outs = (c4, c3, c2, c1)
        self.blocks = nn.ModuleList(
            nn.Sequential(nn.Conv2d(i, o, 3, padding=1), nn.ReLU(inplace=True))
            for i, o in zip(ins, outs)
        )
        self.skip_gates = nn.ModuleList(skip_gates) if skip_gates is not None else None
        self.head = nn.Conv2d(c1, 1, 1)

    def forward(self, bottleneck: Tensor, skips: list[Tensor]) -> Tensor:
        if len(skips) != 4:
            raise ValueError(f"expected 4 skip maps (levels 4..1), got {len(skips)}")
        expected = (self.channels[3], self.channels[2], self.channels[1], self.channels[0])
        for k, (skip, c) in enumerate(zip(skips, expected)):
            if skip.shape[1] != c:
                raise ValueError(f"skip {k} has {skip.shape[1]} channels, expected {c}")
        x = bottleneck
        for k, block in enumerate(self.blocks):
            skip = skips[k]
            if self.skip_gates is not None:
                skip = self.skip_gates[k](x, skip)
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            if x.shape[-2:] != skip.shape[-2:]:
                raise ValueError(
                    f"skip {k} spatial size {tuple(skip.shape[-2:])} does not match "
                    f"decoder feature {tuple(x.shape[-2:])}"
                )
            x = block(torch.cat([x, skip], dim=1))
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        return torch.sigmoid(self.head(x))
