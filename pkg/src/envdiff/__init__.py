"""Recording-environment transfer for speech at desk scale.

A conditional diffusion decoder generates a mel spectrogram carrying the
spoken content of one clip and the recording environment (EQ, reverberation,
noise) of another. The package also ships a synthetic paired-corpus
generator, the two-stage training pipeline, objective metrics, and a CLI.
"""

from envdiff.audio import (
    AudioSegment,
    MelSpectrogram,
    NormStats,
    load_audio,
    save_audio,
    mel_spectrogram,
    normalize,
    denormalize,
    invert_mel,
)

__version__ = "0.1.0"

__all__ = [
    "AudioSegment",
    "MelSpectrogram",
    "NormStats",
    "load_audio",
    "save_audio",
    "mel_spectrogram",
    "normalize",
    "denormalize",
    "invert_mel",
    "__version__",
]
