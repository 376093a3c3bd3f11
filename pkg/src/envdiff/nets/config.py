"""Model configuration and the embedding value type."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

DECODER_KINDS = ("wavenet", "unet")
ENCODER_KINDS = ("r1", "r2")

# Embedding width is tied to the conditioning scheme, not chosen freely.
COND_DIM = {"wavenet": 256, "unet": 80}


@dataclass(frozen=True)
class ModelConfig:
    """Architecture switches and desk-scale widths.

    Widths default to sizes that train in minutes on one CPU core while
    keeping every mechanism (dilated SE blocks, attentive pooling, gated
    residual stacks, skip-connected 2-D encoder-decoders) in play.
    """

    decoder_kind: str = "unet"
    encoder_kind: str = "r2"
    use_enhancer: bool = True
    enhancer_channels: tuple[int, ...] = (8, 16, 32)
    unet_channels: tuple[int, ...] = (8, 16, 32)
    wavenet_blocks: int = 10
    wavenet_channels: int = 64
    r2_channels: int = 128
    attn_bottleneck: int = 64
    # The cited pooling variant conditions attention on global mean/std.
    attention_global_context: bool = True
    step_embed_dim: int = 128

    def __post_init__(self):
        if self.decoder_kind not in DECODER_KINDS:
            raise ValueError(f"decoder_kind must be one of {DECODER_KINDS}")
        if self.encoder_kind not in ENCODER_KINDS:
            raise ValueError(f"encoder_kind must be one of {ENCODER_KINDS}")
        for name in ("enhancer_channels", "unet_channels"):
            chans = getattr(self, name)
            if len(chans) != 3 or any(c < 1 for c in chans):
                raise ValueError(f"{name} must be three positive widths")
            object.__setattr__(self, name, tuple(int(c) for c in chans))
        if self.wavenet_blocks < 1 or self.wavenet_channels < 1:
            raise ValueError("wavenet depth and width must be positive")
        if self.r2_channels % 4 != 0:
            raise ValueError("r2_channels must be divisible by 4 (multi-scale split)")
        if self.step_embed_dim % 2 != 0 or self.step_embed_dim < 2:
            raise ValueError("step_embed_dim must be a positive even number")
        if self.attn_bottleneck < 1:
            raise ValueError("attn_bottleneck must be positive")

    @property
    def cond_dim(self) -> int:
        """Embedding width C implied by the decoder kind."""
        return COND_DIM[self.decoder_kind]

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {
            k: tuple(v) if isinstance(v, list) else v for k, v in d.items()
        }
        return cls(**kwargs)


@dataclass
class EnvironmentEmbedding:
    """Fixed-width environment vector, optionally tagged with its source env."""

    values: np.ndarray
    source_env_id: Optional[str] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("embedding values must be a 1-D vector")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("embedding values must be finite")

    @property
    def dim(self) -> int:
        return self.values.size
