"""Decoder building blocks: CBR, ASPP, attention, enhance and refinement blocks."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class IterationNorm(nn.Module):
    """BatchNorm with one set of statistics and affine parameters per feedback pass.

    Decoder weights are shared across passes but the input distribution of
    pass 2 (with feedback) differs from pass 1, so a single BN would average
    the two in its running statistics and disagree with training-mode output.
    ``slot`` selects the pass; slots beyond the last reuse the last one.
    """

    def __init__(self, channels, slots=1):
        super().__init__()
        self.norms = nn.ModuleList(nn.BatchNorm2d(channels) for _ in range(max(slots, 1)))
        self.slot = 0

    def forward(self, x):
        return self.norms[min(self.slot, len(self.norms) - 1)](x)


def set_norm_slot(module: nn.Module, slot: int) -> None:
    for m in module.modules():
        if isinstance(m, IterationNorm):
            m.slot = slot


class CBR(nn.Sequential):
    """Conv -> BatchNorm -> ReLU, bias-free so that zero maps to zero."""

    def __init__(self, cin, cout, k=3, dilation=1, slots=1):
        pad = dilation * (k - 1) // 2
        super().__init__(
            nn.Conv2d(cin, cout, k, padding=pad, dilation=dilation, bias=False),
            IterationNorm(cout, slots),
            nn.ReLU(inplace=True),
        )


class ASPP(nn.Module):
    """Atrous spatial pyramid pooling with rates (1, 6, 12, 18) and an image-pool branch."""

    def __init__(self, channels, rates=(6, 12, 18), slots=1):
        super().__init__()
        self.branches = nn.ModuleList([CBR(channels, channels, k=1, slots=slots)])
        self.branches.extend(CBR(channels, channels, k=3, dilation=r, slots=slots) for r in rates)
        # no BN here: the pooled map is 1x1 and BN would fail for batch size 1 in training
        self.pool = nn.Sequential(
            nn.AdaptiveAvgPool2d(1), nn.Conv2d(channels, channels, 1, bias=False), nn.ReLU(inplace=True)
        )
        self.project = CBR(channels * (len(rates) + 2), channels, k=1, slots=slots)

    def forward(self, x):
        outs = [b(x) for b in self.branches]
        outs.append(self.pool(x).expand_as(outs[0]))
        return self.project(torch.cat(outs, dim=1))


class ChannelAttention(nn.Module):
    def __init__(self, channels, reduction=16):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.mlp = nn.Sequential(
            nn.Conv2d(channels, hidden, 1, bias=False), nn.ReLU(inplace=True), nn.Conv2d(hidden, channels, 1, bias=False)
        )

    def forward(self, x):
        avg = self.mlp(F.adaptive_avg_pool2d(x, 1))
        mx = self.mlp(F.adaptive_max_pool2d(x, 1))
        return torch.sigmoid(avg + mx)


class SpatialAttention(nn.Module):
    def __init__(self, kernel_size=7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2, bias=False)

    def forward(self, x):
        stats = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(stats))


class Attention(nn.Module):
    """CBAM-style attention: channel then spatial, returned as a map in (0, 1).

    Any module with the same signature (features -> multiplicative map broadcastable
    to the input) can be swapped in via ``EnhanceBlock.attention``.
    """

    def __init__(self, channels, reduction=16, kernel_size=7):
        super().__init__()
        self.channel = ChannelAttention(channels, reduction)
        self.spatial = SpatialAttention(kernel_size)

    def forward(self, x):
        mc = self.channel(x)
        ms = self.spatial(x * mc)
        return mc * ms


class UnitAttention(nn.Module):
    """All-ones attention, used to isolate the ASPP path."""

    def forward(self, x):
        return torch.ones_like(x)


class EnhanceBlock(nn.Module):
    """e = ASPP(f) * Att(ASPP(f)); identity when disabled."""

    def __init__(self, channels, enabled=True, slots=1):
        super().__init__()
        self.enabled = enabled
        if enabled:
            self.aspp = ASPP(channels, slots=slots)
            self.attention = Attention(channels)

    def forward(self, f):
        if not self.enabled:
            return f
        x = self.aspp(f)
        return x * self.attention(x)


class FRBlock(nn.Module):
    """Two CBR layers then bilinear x2 upsampling (skipped at the finest level).

    With ``enabled=False`` the block is a plain upsample, giving an FPN-like
    upsample-and-add decoder.
    """

    def __init__(self, channels, upsample=True, enabled=True, slots=1):
        super().__init__()
        self.enabled = enabled
        self.upsample = upsample
        if enabled:
            self.body = nn.Sequential(CBR(channels, channels, slots=slots), CBR(channels, channels, slots=slots))

    def forward(self, x):
        if self.enabled:
            x = self.body(x)
        if self.upsample:
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        return x
