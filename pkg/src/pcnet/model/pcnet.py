"""PCNet: bottom-up global enhancement, top-down refinement and iterative feedback."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..core import ScoreMap
from .backbone import BackboneSpec, backbone_forward, build_backbone
from .blocks import CBR, EnhanceBlock, FRBlock, IterationNorm, set_norm_slot

CHECKPOINT_FORMAT = "pcnet-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class PCNetConfig:
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    decoder_channels: int = 64
    iterations: int = 2
    mu: float = 0.2
    enhance_block: bool = True
    fr_block: bool = True
    feedback: bool = True
    input_size: int = 704

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            self.backbone = BackboneSpec(**self.backbone)
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.mu < 0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")
        if self.decoder_channels < 1:
            raise ValueError("decoder_channels must be positive")
        if self.input_size % 32:
            raise ValueError(f"input_size {self.input_size} is not divisible by 32")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PCNetConfig":
        d = dict(d)
        bb = d.pop("backbone", {})
        return cls(backbone=BackboneSpec(**bb) if isinstance(bb, dict) else bb, **d)


@dataclass
class ForwardOutputs:
    """Per-iteration logits (input resolution) plus the internal pyramids.

    ``enhanced[j]`` is [E_1..E_4] of iteration j, ``refined[j]`` is [R_1..R_4].
    """

    en_logits: List[torch.Tensor]
    ref_logits: List[torch.Tensor]
    enhanced: List[List[torch.Tensor]]
    refined: List[List[torch.Tensor]]
    e_prime: List[torch.Tensor]
    features: List[torch.Tensor]
    lateral: List[torch.Tensor]

    def __len__(self):
        return len(self.ref_logits)

    @property
    def final(self) -> torch.Tensor:
        return self.ref_logits[-1]


def to_score_maps(logits: torch.Tensor) -> List[ScoreMap]:
    """Squash a (B, 1, H, W) logit batch into ScoreMaps."""
    probs = torch.sigmoid(logits.detach()).to(torch.float64).cpu().numpy()
    return [ScoreMap(p[0]) for p in probs]


def _lateral(cin, cout, slots):
    return nn.Sequential(nn.Conv2d(cin, cout, 1, bias=False), IterationNorm(cout, slots), nn.ReLU(inplace=True))


def _up(x, size):
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


class PCNet(nn.Module):
    def __init__(self, config: Optional[PCNetConfig] = None):
        super().__init__()
        self.config = config = config or PCNetConfig()
        d = config.decoder_channels
        chans = config.backbone.channels
        # one normalisation slot per feedback pass
        slots = config.iterations
        self.backbone = build_backbone(config.backbone)
        self.lateral = nn.ModuleList(_lateral(c, d, slots) for c in chans)
        self.enhance = nn.ModuleList(EnhanceBlock(d, config.enhance_block, slots) for _ in range(4))
        self.e_cbr = CBR(d, d, slots=slots)
        self.en_head = nn.Conv2d(d, 1, 7, padding=3)
        self.refine = nn.ModuleList(FRBlock(d, upsample=i > 0, enabled=config.fr_block, slots=slots) for i in range(4))
        self.ref_head = nn.Conv2d(d, 1, 3, padding=1)
        # built even with feedback off so toggled models share a weight layout
        self.feedback_proj = nn.Conv2d(d, chans[0], 1)

    def extract(self, image: torch.Tensor) -> List[torch.Tensor]:
        feats = backbone_forward(self.backbone, image)
        if len(feats) != 4:
            raise RuntimeError("backbone must return four levels")
        return feats

    def mgfe(self, feats, lateral, feedback=None):
        """Bottom-up enhancement; returns ([E_1..E_4], E', P_en logits at F_4 scale)."""
        if feedback is None:
            x = lateral[0]
        else:
            if feedback.shape != feats[0].shape:
                raise ValueError(f"feedback shape {tuple(feedback.shape)} != F_1 shape {tuple(feats[0].shape)}")
            x = self.lateral[0](feats[0] + feedback)
        enhanced = [self.enhance[0](x)]
        for i in range(1, 4):
            x = lateral[i] + F.avg_pool2d(enhanced[-1], 2)
            enhanced.append(self.enhance[i](x))
        e_prime = self.e_cbr(enhanced[-1])
        return enhanced, e_prime, self.en_head(e_prime)

    def mfr(self, lateral, e_prime):
        """Top-down refinement; returns ([R_1..R_4], P_ref logits at F_1 scale)."""
        r = self.refine[3](e_prime + lateral[3])
        refined = [r]
        for i in (2, 1, 0):
            r = self.refine[i](r + lateral[i])
            refined.append(r)
        refined.reverse()
        return refined, self.ref_head(refined[0])

    def forward(self, image: torch.Tensor, iterations: Optional[int] = None) -> ForwardOutputs:
        j = self.config.iterations if iterations is None else int(iterations)
        if j < 1:
            raise ValueError(f"iterations must be >= 1, got {j}")
        size = image.shape[-2:]
        feats = self.extract(image)
        set_norm_slot(self, 0)
        lateral = [m(f) for m, f in zip(self.lateral, feats)]
        out = ForwardOutputs([], [], [], [], [], feats, lateral)
        feedback = None
        for it in range(j):
            # without feedback every pass sees the same input, so it shares slot 0
            set_norm_slot(self, it if self.config.feedback else 0)
            enhanced, e_prime, p_en = self.mgfe(feats, lateral, feedback)
            refined, p_ref = self.mfr(lateral, e_prime)
            out.enhanced.append(enhanced)
            out.refined.append(refined)
            out.e_prime.append(e_prime)
            out.en_logits.append(_up(p_en, size))
            out.ref_logits.append(_up(p_ref, size))
            if self.config.feedback and it + 1 < j:
                feedback = self.feedback_proj(refined[0])
        set_norm_slot(self, 0)
        return out

    @torch.no_grad()
    def predict(self, image: torch.Tensor, iterations: Optional[int] = None) -> List[ScoreMap]:
        return to_score_maps(self(image, iterations).final)


def save_checkpoint(path, model: PCNet, extra: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": model.config.to_dict(),
            "state_dict": model.state_dict(),
            "extra": extra or {},
        },
        path,
    )
    return path


def load_checkpoint(path, expect: Optional[PCNetConfig] = None):
    """Return (model, extra). ``expect`` must match the stored architecture if given."""
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a PCNet checkpoint")
    if blob["version"] > CHECKPOINT_VERSION:
        raise ValueError(f"{path}: checkpoint version {blob['version']} is newer than supported {CHECKPOINT_VERSION}")
    cfg = PCNetConfig.from_dict(blob["config"])
    if expect is not None:
        check_compatible(cfg, expect)
    # weights never need re-downloading when restoring
    cfg.backbone.pretrained = False
    model = PCNet(cfg)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, blob.get("extra", {})


ARCH_FIELDS = ("decoder_channels", "iterations", "enhance_block", "fr_block")


def check_compatible(stored: PCNetConfig, expect: PCNetConfig) -> None:
    problems = [
        f"{k}: checkpoint {getattr(stored, k)!r} vs config {getattr(expect, k)!r}"
        for k in ARCH_FIELDS
        if getattr(stored, k) != getattr(expect, k)
    ]
    if (stored.backbone.name, stored.backbone.channels) != (expect.backbone.name, expect.backbone.channels):
        problems.append(f"backbone: checkpoint {stored.backbone.name} vs config {expect.backbone.name}")
    if problems:
        raise ValueError("checkpoint/config mismatch: " + "; ".join(problems))
