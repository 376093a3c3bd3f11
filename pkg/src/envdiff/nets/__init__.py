"""Trainable components: enhancer, environment encoders, diffusion decoders."""

from envdiff.nets.config import EnvironmentEmbedding, ModelConfig
from envdiff.nets.decoders import UNetDecoder, WaveNetDecoder, build_condition
from envdiff.nets.encoders import R1Encoder, R2Encoder
from envdiff.nets.enhancer import ResUNetEnhancer
from envdiff.nets.model import (
    EnvTransferModel,
    build_model,
    load_checkpoint,
    model_from_checkpoint,
    param_fingerprint,
    save_checkpoint,
)

__all__ = [
    "EnvironmentEmbedding",
    "ModelConfig",
    "UNetDecoder",
    "WaveNetDecoder",
    "build_condition",
    "R1Encoder",
    "R2Encoder",
    "ResUNetEnhancer",
    "EnvTransferModel",
    "build_model",
    "load_checkpoint",
    "model_from_checkpoint",
    "param_fingerprint",
    "save_checkpoint",
]
