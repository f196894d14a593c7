"""Edge-weighted BCE + IoU loss with iteration-weighted deep supervision."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple

import torch
import torch.nn.functional as F

IOU_EPS = 1.0
EDGE_FACTOR = 5.0


@dataclass
class LossConfig:
    mu: float = 0.2
    iteration_weighting: str = "offset"  # "offset": 1+(i-1)mu, "literal": (i-1)mu
    edge_weight_window: int = 31

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")
        if self.iteration_weighting not in ("offset", "literal"):
            raise ValueError(f"unknown iteration_weighting {self.iteration_weighting!r}")
        if self.edge_weight_window < 3 or self.edge_weight_window % 2 == 0:
            raise ValueError(f"edge_weight_window must be odd and >= 3, got {self.edge_weight_window}")


class LossTerms(NamedTuple):
    total: torch.Tensor
    enhance: torch.Tensor  # L_e
    refine: torch.Tensor  # L_r


def _as_4d(t: torch.Tensor) -> torch.Tensor:
    if t.dim() == 2:
        return t[None, None]
    if t.dim() == 3:
        return t[:, None]
    return t


def _check(logits, gt):
    logits, gt = _as_4d(logits), _as_4d(gt).to(logits.dtype)
    if logits.shape != gt.shape:
        raise ValueError(f"logits shape {tuple(logits.shape)} != gt shape {tuple(gt.shape)}")
    return logits, gt


def edge_weights(gt: torch.Tensor, window: int = 31) -> torch.Tensor:
    """w = 1 + 5|avgpool(gt) - gt|, zero-padded pooling counting the padding."""
    gt = _as_4d(gt)
    pooled = F.avg_pool2d(gt, window, stride=1, padding=window // 2, count_include_pad=True)
    return 1 + EDGE_FACTOR * (pooled - gt).abs()


def weighted_bce(logits: torch.Tensor, gt: torch.Tensor, window: int = 31) -> torch.Tensor:
    """Per-image weighted BCE (normalised by total weight), averaged over the batch."""
    logits, gt = _check(logits, gt)
    w = edge_weights(gt, window)
    bce = F.binary_cross_entropy_with_logits(logits, gt, reduction="none")
    return ((w * bce).sum((2, 3)) / w.sum((2, 3))).mean()


def weighted_iou(logits: torch.Tensor, gt: torch.Tensor, window: int = 31) -> torch.Tensor:
    logits, gt = _check(logits, gt)
    w = edge_weights(gt, window)
    p = torch.sigmoid(logits)
    inter = (w * p * gt).sum((2, 3))
    union = (w * (p + gt - p * gt)).sum((2, 3))
    return (1 - (inter + IOU_EPS) / (union + IOU_EPS)).mean()


def base_loss(logits, gt, window=31):
    return weighted_bce(logits, gt, window) + weighted_iou(logits, gt, window)


def iteration_weights(j: int, cfg: LossConfig) -> List[float]:
    offset = 1.0 if cfg.iteration_weighting == "offset" else 0.0
    return [offset + i * cfg.mu for i in range(j)]


def total_loss(outputs, gt: torch.Tensor, cfg: LossConfig) -> LossTerms:
    """L_e + L_r over every iteration's P_en and P_ref."""
    gt = _as_4d(gt)
    j = len(outputs.ref_logits)
    if j < 1 or len(outputs.en_logits) != j:
        raise ValueError("outputs must hold one (P_en, P_ref) pair per iteration")
    if outputs.ref_logits[0].shape[-2:] != gt.shape[-2:]:
        raise ValueError(f"gt size {tuple(gt.shape[-2:])} != output size {tuple(outputs.ref_logits[0].shape[-2:])}")
    weights = iteration_weights(j, cfg)
    win = cfg.edge_weight_window
    l_e = sum(w * base_loss(p, gt, win) for w, p in zip(weights, outputs.en_logits))
    l_r = sum(w * base_loss(p, gt, win) for w, p in zip(weights, outputs.ref_logits))
    return LossTerms(l_e + l_r, l_e, l_r)
