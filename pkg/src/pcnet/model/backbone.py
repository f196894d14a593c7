"""Four-level feature pyramid extractors (strides 4, 8, 16, 32)."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import torch
import torch.nn as nn

log = logging.getLogger(__name__)

STRIDES = (4, 8, 16, 32)
PVT_CHANNELS = (64, 128, 320, 512)
TINY_CHANNELS = (16, 32, 48, 64)


@dataclass
class BackboneSpec:
    name: str = "pvt_class"
    channels: tuple = PVT_CHANNELS
    pretrained: bool = False
    weights_path: Optional[str] = None

    def __post_init__(self):
        if self.name not in ("pvt_class", "tiny_test"):
            raise ValueError(f"unknown backbone {self.name!r}")
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) != 4:
            raise ValueError("a backbone exposes exactly four levels")

    @classmethod
    def pvt(cls, **kw) -> "BackboneSpec":
        return cls("pvt_class", PVT_CHANNELS, **kw)

    @classmethod
    def tiny(cls, channels=TINY_CHANNELS) -> "BackboneSpec":
        return cls("tiny_test", tuple(channels))


def _cbr(cin, cout, stride=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class TinyBackbone(nn.Module):
    """Strided conv stack with the same level/stride contract as the PVT adapter."""

    def __init__(self, channels=TINY_CHANNELS):
        super().__init__()
        c1, c2, c3, c4 = channels
        self.stem = nn.Sequential(_cbr(3, c1 // 2, 2), _cbr(c1 // 2, c1, 2))
        self.stage2 = _cbr(c1, c2, 2)
        self.stage3 = _cbr(c2, c3, 2)
        self.stage4 = _cbr(c3, c4, 2)

    def forward(self, x):
        f1 = self.stem(x)
        f2 = self.stage2(f1)
        f3 = self.stage3(f2)
        f4 = self.stage4(f3)
        return [f1, f2, f3, f4]


class PVTBackbone(nn.Module):
    """PVTv2-B2 feature extractor (timm implementation) returning four levels."""

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        import timm

        self.body = timm.create_model("pvt_v2_b2", pretrained=False, features_only=True)
        channels = tuple(self.body.feature_info.channels())
        if channels != spec.channels:
            raise ValueError(f"pvt_v2_b2 exposes channels {channels}, spec asks for {spec.channels}")
        if spec.pretrained:
            load_pretrained_pvt(self, spec.weights_path)

    def forward(self, x):
        return list(self.body(x))


def load_pretrained_pvt(backbone: PVTBackbone, path) -> bool:
    """Load published PVTv2-B2 weights; fall back to random init with a warning."""
    if not path or not Path(path).is_file():
        warnings.warn(f"pretrained PVT weights not found at {path!r}; using random initialisation")
        return False
    from timm.models.pvt_v2 import checkpoint_filter_fn

    state = torch.load(path, map_location="cpu", weights_only=True)
    if isinstance(state, dict) and "state_dict" in state:
        state = state["state_dict"]
    state = checkpoint_filter_fn(state, backbone.body)
    missing, unexpected = backbone.body.load_state_dict(state, strict=False)
    log.info("loaded PVT weights from %s (%d missing, %d unexpected)", path, len(missing), len(unexpected))
    return True


def build_backbone(spec: BackboneSpec) -> nn.Module:
    if spec.name == "tiny_test":
        return TinyBackbone(spec.channels)
    return PVTBackbone(spec)


def backbone_forward(backbone: nn.Module, image: torch.Tensor) -> list:
    """Run ``backbone`` after checking the input contract."""
    h, w = image.shape[-2:]
    if h % 32 or w % 32:
        raise ValueError(f"input size {h}x{w} is not divisible by 32")
    return backbone(image)
