"""Environment encoders: the dilated-SE trunk (r2) and the minimal baseline (r1)."""

from __future__ import annotations

import torch
from torch import nn

from envdiff.nets.parts import AttentiveStatsPool, check_mel_batch

# Trunk convolutions never see fewer frames than this; shorter reference
# clips carry too little context for the pooled statistics to mean anything.
MIN_REF_FRAMES = 16


class SERes2Block(nn.Module):
    """Dilated residual block over four channel sub-bands with squeeze-excite."""

    SCALE = 4

    def __init__(self, channels: int, dilation: int):
        super().__init__()
        width = channels // self.SCALE
        self.pre = nn.Sequential(
            nn.Conv1d(channels, channels, 1), nn.ReLU(), nn.BatchNorm1d(channels)
        )
        self.branches = nn.ModuleList(
            nn.Conv1d(width, width, 3, dilation=dilation, padding=dilation)
            for _ in range(self.SCALE - 1)
        )
        self.post = nn.Sequential(
            nn.Conv1d(channels, channels, 1), nn.ReLU(), nn.BatchNorm1d(channels)
        )
        self.se = nn.Sequential(
            nn.Linear(channels, channels // 8),
            nn.ReLU(),
            nn.Linear(channels // 8, channels),
            nn.Sigmoid(),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.pre(x)
        chunks = list(torch.chunk(h, self.SCALE, dim=1))
        out = [chunks[0]]
        prev = None
        for conv, chunk in zip(self.branches, chunks[1:]):
            prev = conv(chunk if prev is None else chunk + prev)
            out.append(prev)
        h = self.post(torch.cat(out, dim=1))
        gate = self.se(h.mean(dim=2))
        return x + h * gate[:, :, None]


class R2Encoder(nn.Module):
    """Frame-level dilated trunk, multi-layer aggregation, attentive pooling."""

    def __init__(
        self,
        out_dim: int,
        channels: int = 128,
        bottleneck: int = 64,
        global_context: bool = True,
    ):
        super().__init__()
        self.out_dim = out_dim
        self.stem = nn.Sequential(
            nn.Conv1d(80, channels, 5, padding=2), nn.ReLU(), nn.BatchNorm1d(channels)
        )
        self.blocks = nn.ModuleList(SERes2Block(channels, d) for d in (2, 3, 4))
        self.mfa = nn.Sequential(nn.Conv1d(3 * channels, channels, 1), nn.ReLU())
        self.pool = AttentiveStatsPool(channels, bottleneck, global_context)
        self.norm = nn.BatchNorm1d(2 * channels)
        self.fc = nn.Linear(2 * channels, out_dim)

    def forward(self, r: torch.Tensor) -> torch.Tensor:
        check_mel_batch(r, min_t=MIN_REF_FRAMES)
        h = self.stem(r)
        feats = []
        for block in self.blocks:
            h = block(h)
            feats.append(h)
        h = self.mfa(torch.cat(feats, dim=1))
        return self.fc(self.norm(self.pool(h)))


class R1Encoder(nn.Module):
    """Kernel-1 trunk with the same pooling; permutation-invariant over frames."""

    def __init__(
        self,
        out_dim: int,
        channels: int = 128,
        bottleneck: int = 64,
        global_context: bool = True,
    ):
        super().__init__()
        self.out_dim = out_dim
        self.stem = nn.Sequential(
            nn.Conv1d(80, channels, 1), nn.ReLU(), nn.BatchNorm1d(channels)
        )
        self.pool = AttentiveStatsPool(channels, bottleneck, global_context)
        self.norm = nn.BatchNorm1d(2 * channels)
        self.fc = nn.Linear(2 * channels, out_dim)

    def forward(self, r: torch.Tensor) -> torch.Tensor:
        check_mel_batch(r, min_t=MIN_REF_FRAMES)
        return self.fc(self.norm(self.pool(self.stem(r))))
