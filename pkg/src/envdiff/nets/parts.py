"""Shared layers: step embeddings, 2-D residual blocks, attentive pooling."""

from __future__ import annotations

import math

import torch
from torch import nn


def step_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of integer diffusion steps, shape (B, dim)."""
    if t.ndim != 1:
        raise ValueError("t must be a 1-D batch of steps")
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float32, device=t.device) / half
    )
    angles = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=1)


class StepMLP(nn.Module):
    """Two-layer map applied to the sinusoidal step embedding."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.net = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        return self.net(step_embedding(t, self.dim))


class ResBlock2d(nn.Module):
    """GroupNorm residual block; optional additive step conditioning."""

    def __init__(self, in_ch: int, out_ch: int, step_dim: int | None = None):
        super().__init__()
        groups = math.gcd(4, out_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm1 = nn.GroupNorm(groups, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(groups, out_ch)
        self.act = nn.SiLU()
        self.step_proj = nn.Linear(step_dim, out_ch) if step_dim else None
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, step: torch.Tensor | None = None) -> torch.Tensor:
        h = self.act(self.norm1(self.conv1(x)))
        if self.step_proj is not None:
            if step is None:
                raise ValueError("block built with step conditioning needs a step vector")
            h = h + self.step_proj(step)[:, :, None, None]
        h = self.act(self.norm2(self.conv2(h)))
        return h + self.skip(x)


class AttentiveStatsPool(nn.Module):
    """Attention-weighted mean and std over time: (B, C, T) -> (B, 2C).

    With global context the attention net sees each frame concatenated with
    the clip-level mean and std; both reductions commute with any frame
    permutation, so a kernel-1 trunk stays permutation-invariant end to end.
    """

    def __init__(self, channels: int, bottleneck: int, global_context: bool = True):
        super().__init__()
        self.global_context = global_context
        in_ch = channels * 3 if global_context else channels
        self.attn = nn.Sequential(
            nn.Conv1d(in_ch, bottleneck, 1),
            nn.Tanh(),
            nn.Conv1d(bottleneck, channels, 1),
        )

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        if self.global_context:
            mean = h.mean(dim=2, keepdim=True).expand_as(h)
            std = h.var(dim=2, keepdim=True, unbiased=False).clamp_min(1e-8).sqrt()
            ctx = torch.cat([h, mean, std.expand_as(h)], dim=1)
        else:
            ctx = h
        w = torch.softmax(self.attn(ctx), dim=2)
        mu = (w * h).sum(dim=2)
        var = (w * h * h).sum(dim=2) - mu * mu
        sigma = var.clamp_min(1e-8).sqrt()
        return torch.cat([mu, sigma], dim=1)


def check_mel_batch(x: torch.Tensor, n_mels: int = 80, min_t: int = 1) -> None:
    if x.ndim != 3 or x.shape[1] != n_mels:
        raise ValueError(f"expected a (batch, {n_mels}, frames) tensor, got {tuple(x.shape)}")
    if x.shape[2] < min_t:
        raise ValueError(f"clip too short: {x.shape[2]} frames, need at least {min_t}")
