"""Content enhancer: 2-D residual U-Net over normalized mel grids."""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from envdiff.nets.parts import ResBlock2d, check_mel_batch


class ResUNetEnhancer(nn.Module):
    """Maps a degraded mel grid toward its clean counterpart, same shape.

    Two stride-2 stages in both axes with skip connections. The output head
    is zero-initialized and added to the input, so an untrained enhancer is
    exactly the identity map.
    """

    MIN_FRAMES = 4

    def __init__(self, channels: tuple[int, int, int] = (8, 16, 32)):
        super().__init__()
        c0, c1, c2 = channels
        self.stem = nn.Conv2d(1, c0, 3, padding=1)
        self.enc0 = ResBlock2d(c0, c0)
        self.down0 = nn.Conv2d(c0, c1, 3, stride=2, padding=1)
        self.enc1 = ResBlock2d(c1, c1)
        self.down1 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.mid = ResBlock2d(c2, c2)
        self.up1 = nn.Conv2d(c2, c1, 3, padding=1)
        self.dec1 = ResBlock2d(2 * c1, c1)
        self.up0 = nn.Conv2d(c1, c0, 3, padding=1)
        self.dec0 = ResBlock2d(2 * c0, c0)
        self.head = nn.Conv2d(c0, 1, 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_mel_batch(x, min_t=self.MIN_FRAMES)
        g = x[:, None]
        h0 = self.enc0(self.stem(g))
        h1 = self.enc1(self.down0(h0))
        h2 = self.mid(self.down1(h1))
        u1 = self.up1(F.interpolate(h2, size=h1.shape[-2:], mode="nearest"))
        d1 = self.dec1(torch.cat([u1, h1], dim=1))
        u0 = self.up0(F.interpolate(d1, size=h0.shape[-2:], mode="nearest"))
        d0 = self.dec0(torch.cat([u0, h0], dim=1))
        return x + self.head(d0)[:, 0]
