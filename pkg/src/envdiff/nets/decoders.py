"""Diffusion decoders and the two conditioning schemes."""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from envdiff.nets.config import COND_DIM, DECODER_KINDS
from envdiff.nets.parts import ResBlock2d, StepMLP, check_mel_batch


def build_condition(
    x_c: torch.Tensor,
    z_r: torch.Tensor,
    decoder_kind: str,
    proj: nn.Module | None = None,
) -> torch.Tensor:
    """Combine enhanced content (B, 80, T) with embeddings (B, C) into a grid.

    unet: stack content under the embedding repeated along time, (B, 160, T).
    wavenet: per-frame linear map of content to 256 channels plus the
    embedding broadcast over time, (B, 256, T); `proj` supplies the map.
    """
    check_mel_batch(x_c)
    if decoder_kind not in DECODER_KINDS:
        raise ValueError(f"decoder_kind must be one of {DECODER_KINDS}")
    want = COND_DIM[decoder_kind]
    if z_r.ndim != 2 or z_r.shape[0] != x_c.shape[0] or z_r.shape[1] != want:
        raise ValueError(
            f"embedding must be (batch, {want}) for {decoder_kind}, got {tuple(z_r.shape)}"
        )
    t = x_c.shape[2]
    if decoder_kind == "unet":
        return torch.cat([x_c, z_r[:, :, None].expand(-1, -1, t)], dim=1)
    if proj is None:
        raise ValueError("wavenet conditioning needs the content projection layer")
    lifted = proj(x_c.transpose(1, 2)).transpose(1, 2)
    return lifted + z_r[:, :, None]


class WaveNetBlock(nn.Module):
    def __init__(self, channels: int, dilation: int, cond_dim: int, step_dim: int):
        super().__init__()
        self.dil = nn.Conv1d(channels, 2 * channels, 3, dilation=dilation, padding=dilation)
        self.cond = nn.Conv1d(cond_dim, 2 * channels, 1)
        self.step = nn.Linear(step_dim, channels)
        self.res = nn.Conv1d(channels, channels, 1)
        self.skip = nn.Conv1d(channels, channels, 1)

    def forward(self, h, cond, step):
        g = self.dil(h + self.step(step)[:, :, None]) + self.cond(cond)
        a, b = torch.chunk(g, 2, dim=1)
        z = torch.tanh(a) * torch.sigmoid(b)
        return h + self.res(z), self.skip(z)


class WaveNetDecoder(nn.Module):
    """Gated dilated 1-D residual stack; noise prediction from the skip sum."""

    def __init__(self, blocks: int = 10, channels: int = 64, step_dim: int = 128):
        super().__init__()
        self.cond_dim = COND_DIM["wavenet"]
        self.step_mlp = StepMLP(step_dim)
        self.inp = nn.Conv1d(80, channels, 1)
        dilations = [2 ** (i % 5) for i in range(blocks)]
        self.blocks = nn.ModuleList(
            WaveNetBlock(channels, d, self.cond_dim, step_dim) for d in dilations
        )
        self.head = nn.Sequential(
            nn.ReLU(), nn.Conv1d(channels, channels, 1), nn.ReLU(), nn.Conv1d(channels, 80, 1)
        )
        nn.init.zeros_(self.head[-1].weight)
        nn.init.zeros_(self.head[-1].bias)

    def forward(self, y_t: torch.Tensor, t: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        check_mel_batch(y_t)
        if cond.shape != (y_t.shape[0], self.cond_dim, y_t.shape[2]):
            raise ValueError(f"condition grid shape {tuple(cond.shape)} does not match input")
        step = self.step_mlp(t)
        h = self.inp(y_t)
        skips = None
        for block in self.blocks:
            h, s = block(h, cond, step)
            skips = s if skips is None else skips + s
        return self.head(skips)


class UNetDecoder(nn.Module):
    """2-D encoder-decoder over the mel grid with the condition stacked at input.

    The 160-row condition grid splits into two 80-row channels (content and
    repeated embedding) joined with the noisy grid, giving a 3-channel image.
    """

    MIN_FRAMES = 4

    def __init__(self, channels: tuple[int, int, int] = (8, 16, 32), step_dim: int = 128):
        super().__init__()
        self.cond_dim = COND_DIM["unet"]
        c0, c1, c2 = channels
        self.step_mlp = StepMLP(step_dim)
        self.stem = nn.Conv2d(3, c0, 3, padding=1)
        self.enc0 = ResBlock2d(c0, c0, step_dim)
        self.down0 = nn.Conv2d(c0, c1, 3, stride=2, padding=1)
        self.enc1 = ResBlock2d(c1, c1, step_dim)
        self.down1 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.mid = ResBlock2d(c2, c2, step_dim)
        self.up1 = nn.Conv2d(c2, c1, 3, padding=1)
        self.dec1 = ResBlock2d(2 * c1, c1, step_dim)
        self.up0 = nn.Conv2d(c1, c0, 3, padding=1)
        self.dec0 = ResBlock2d(2 * c0, c0, step_dim)
        self.head = nn.Conv2d(c0, 1, 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, y_t: torch.Tensor, t: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        check_mel_batch(y_t, min_t=self.MIN_FRAMES)
        if cond.shape != (y_t.shape[0], 2 * self.cond_dim, y_t.shape[2]):
            raise ValueError(f"condition grid shape {tuple(cond.shape)} does not match input")
        step = self.step_mlp(t)
        g = torch.cat([y_t[:, None], cond.reshape(cond.shape[0], 2, 80, -1)], dim=1)
        h0 = self.enc0(self.stem(g), step)
        h1 = self.enc1(self.down0(h0), step)
        h2 = self.mid(self.down1(h1), step)
        u1 = self.up1(F.interpolate(h2, size=h1.shape[-2:], mode="nearest"))
        d1 = self.dec1(torch.cat([u1, h1], dim=1), step)
        u0 = self.up0(F.interpolate(d1, size=h0.shape[-2:], mode="nearest"))
        d0 = self.dec0(torch.cat([u0, h0], dim=1), step)
        return self.head(d0)[:, 0]
