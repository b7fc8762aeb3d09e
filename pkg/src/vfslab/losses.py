"""Composite segmentation loss: weighted Tversky + binary cross-entropy.

All functions take probability maps (not logits) together with a binary
target and an optional ignore mask (1 = pixel excluded). They accept any
matching tensor shapes, so a batch can be treated as one bag of pixels.
Each returns a ``LossValue``: the scalar loss tensor plus a flag that is
True when every pixel was ignored (the loss is then a graph-connected
zero so callers can skip the step without breaking backward).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import torch
from torch import Tensor


@dataclass
class LossConfig:
    """Weights of the composite loss.

    theta blends the two terms (theta * tversky + (1 - theta) * bce).
    alpha / beta weight false positives / false negatives inside the
    Tversky denominator; at alpha = beta = 0.5 the Tversky index equals
    the soft Dice coefficient. epsilon guards 0/0 on empty frames and is
    the clamp margin for the BCE logs.
    """

    theta: float = 0.5
    alpha: float = 0.5
    beta: float = 0.5
    epsilon: float = 1e-6

    def __post_init__(self) -> None:
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must be in [0, 1], got {self.theta}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "alpha": self.alpha,
            "beta": self.beta,
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        return cls(**d)


class LossValue(NamedTuple):
    value: Tensor
    degenerate: bool


def _validity(p: Tensor, y: Tensor, ignore: Optional[Tensor]) -> Tensor:
    if y.shape != p.shape:
        raise ValueError(f"target shape {tuple(y.shape)} != prediction shape {tuple(p.shape)}")
    if ignore is None:
        return torch.ones_like(p)
    if ignore.shape != p.shape:
        raise ValueError(f"ignore shape {tuple(ignore.shape)} != prediction shape {tuple(p.shape)}")
    return (ignore == 0).to(p.dtype)


def tversky_loss(
    p: Tensor, y: Tensor, ignore: Optional[Tensor] = None, cfg: Optional[LossConfig] = None
) -> LossValue:
    """Complement of the Tversky index over soft counts on valid pixels.

    TP = sum(p*y), FP = sum(p*(1-y)), FN = sum((1-p)*y); the returned loss
    is 1 - TP / (TP + alpha*FP + beta*FN). Epsilon smoothing is applied
    only when the denominator vanishes (empty target, empty prediction),
    which keeps nonzero cases exact and defines the empty case as loss 0.
    """
    cfg = cfg or LossConfig()
    valid = _validity(p, y, ignore)
    if float(valid.sum()) == 0.0:
        return LossValue(p.sum() * 0.0, True)
    yf = y.to(p.dtype)
    tp = (p * yf * valid).sum()
    fp = (p * (1.0 - yf) * valid).sum()
    fn = ((1.0 - p) * yf * valid).sum()
    den = tp + cfg.alpha * fp + cfg.beta * fn
    if den.detach().item() == 0.0:
        return LossValue(1.0 - (tp + cfg.epsilon) / (den + cfg.epsilon), False)
    return LossValue(1.0 - tp / den, False)


def bce_loss(
    p: Tensor, y: Tensor, ignore: Optional[Tensor] = None, cfg: Optional[LossConfig] = None
) -> LossValue:
    """Mean binary cross-entropy over valid pixels, with p clamped to
    [epsilon, 1 - epsilon] before the logs."""
    cfg = cfg or LossConfig()
    valid = _validity(p, y, ignore)
    n = valid.sum()
    if float(n) == 0.0:
        return LossValue(p.sum() * 0.0, True)
    yf = y.to(p.dtype)
    pc = p.clamp(cfg.epsilon, 1.0 - cfg.epsilon)
    ce = -(yf * torch.log(pc) + (1.0 - yf) * torch.log(1.0 - pc))
    return LossValue((ce * valid).sum() / n, False)


def combined_loss(
    p: Tensor, y: Tensor, ignore: Optional[Tensor] = None, cfg: Optional[LossConfig] = None
) -> LossValue:
    """theta * tversky_loss + (1 - theta) * bce_loss."""
    cfg = cfg or LossConfig()
    tl = tversky_loss(p, y, ignore, cfg)
    ce = bce_loss(p, y, ignore, cfg)
    return LossValue(cfg.theta * tl.value + (1.0 - cfg.theta) * ce.value, tl.degenerate or ce.degenerate)
