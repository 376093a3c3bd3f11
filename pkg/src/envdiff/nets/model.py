"""Assembled transfer model plus checkpoint serialization."""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Optional

import torch
from torch import nn

from envdiff.audio import NormStats
from envdiff.diffusion import NoiseSchedule, build_schedule
from envdiff.nets.config import ModelConfig
from envdiff.nets.decoders import UNetDecoder, WaveNetDecoder, build_condition
from envdiff.nets.encoders import R1Encoder, R2Encoder
from envdiff.nets.enhancer import ResUNetEnhancer

CHECKPOINT_VERSION = 1


class EnvTransferModel(nn.Module):
    """Enhancer, environment encoder, and diffusion decoder under one config."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.enhancer = (
            ResUNetEnhancer(config.enhancer_channels) if config.use_enhancer else None
        )
        enc_cls = R2Encoder if config.encoder_kind == "r2" else R1Encoder
        self.encoder = enc_cls(
            config.cond_dim,
            channels=config.r2_channels,
            bottleneck=config.attn_bottleneck,
            global_context=config.attention_global_context,
        )
        if config.decoder_kind == "wavenet":
            self.decoder = WaveNetDecoder(
                config.wavenet_blocks, config.wavenet_channels, config.step_embed_dim
            )
            self.cond_proj = nn.Linear(80, config.cond_dim)
        else:
            self.decoder = UNetDecoder(config.unet_channels, config.step_embed_dim)
            self.cond_proj = None

    def enhance(self, x: torch.Tensor) -> torch.Tensor:
        """Content cleanup; the identity when the config carries no enhancer."""
        return x if self.enhancer is None else self.enhancer(x)

    def embed(self, r: torch.Tensor) -> torch.Tensor:
        return self.encoder(r)

    def predict_eps(
        self, y_t: torch.Tensor, t: torch.Tensor, x_c: torch.Tensor, z_r: torch.Tensor
    ) -> torch.Tensor:
        cond = build_condition(x_c, z_r, self.config.decoder_kind, self.cond_proj)
        return self.decoder(y_t, t, cond)


def build_model(config: Optional[ModelConfig] = None) -> EnvTransferModel:
    return EnvTransferModel(config or ModelConfig())


def param_fingerprint(module: nn.Module) -> str:
    """Order-stable digest of every parameter tensor's exact bytes."""
    h = hashlib.sha256()
    for name, p in sorted(module.named_parameters()):
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(
    path,
    model: EnvTransferModel,
    norm_stats: NormStats,
    schedule: NoiseSchedule,
    extra: Optional[dict] = None,
) -> None:
    """Write a self-describing checkpoint: config, weights, stats, schedule."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "state": model.state_dict(),
        "norm_stats": {
            "min_log_mel": norm_stats.min_log_mel,
            "max_log_mel": norm_stats.max_log_mel,
        },
        "schedule": {
            "T": int(schedule.T),
            "beta_start": float(schedule.beta_start),
            "beta_end": float(schedule.beta_end),
        },
        "extra": dict(extra or {}),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise OSError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise ValueError(f"not a model checkpoint: {path}")
    if payload["format_version"] != CHECKPOINT_VERSION:
        raise ValueError(
            f"checkpoint format {payload['format_version']} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    return payload


def model_from_checkpoint(path) -> tuple[EnvTransferModel, NormStats, NoiseSchedule]:
    """Rebuild the model, normalization stats, and schedule from one file."""
    payload = load_checkpoint(path)
    model = EnvTransferModel(ModelConfig.from_dict(payload["config"]))
    model.load_state_dict(payload["state"])
    model.eval()
    stats = NormStats(**payload["norm_stats"])
    sched = payload["schedule"]
    schedule = build_schedule(sched["T"], sched["beta_start"], sched["beta_end"])
    return model, stats, schedule
