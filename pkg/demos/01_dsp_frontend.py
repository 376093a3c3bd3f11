"""
Mel-spectrogram frontend
========================

Every model in this package works on log-mel grids in a fixed normalized
range. This script walks the full path from a waveform to that grid and
back out through Griffin-Lim phase recovery.
"""

import numpy as np

from envdiff.audio import (
    AudioSegment, compute_norm_stats, denormalize, frame_count, invert_mel,
    mel_spectrogram, normalize, stft,
)

# one second of a 1 kHz tone at the package sample rate of 16 kHz
sr = 16000
t = np.arange(sr) / sr
tone = AudioSegment(0.4 * np.sin(2 * np.pi * 1000.0 * t))

# the STFT uses a 1024-point Hann window with hop 256 and center padding,
# so a clip of n samples always yields n // 256 + 1 frames
S = stft(tone)
print("stft grid:", S.shape, "expected frames:", frame_count(tone.n_samples))

# 1000 Hz sits exactly on FFT bin 64 (1000 / (16000 / 1024))
profile = np.abs(S).mean(axis=1)
print("peak bin:", int(profile.argmax()))

# 80 mel filters cover 0 to 8000 Hz; magnitudes are floored then logged,
# so silence maps to a flat grid at log(1e-5)
mel = mel_spectrogram(tone)
print("mel grid:", mel.values.shape, "range:",
      round(float(mel.values.min()), 2), "to", round(float(mel.values.max()), 2))

silence = mel_spectrogram(AudioSegment(np.zeros(sr)))
print("silence floor:", float(silence.values.min()) == float(np.log(1e-5)))

# models see min-max normalized grids in [-1, 1]; the stats needed to undo
# the mapping ride along with the grid
stats = compute_norm_stats([mel])
norm = normalize(mel, stats)
back = denormalize(norm)
print("round trip error:", float(np.abs(back.values - mel.values).max()))

# Griffin-Lim recovers a waveform whose mel is close to the requested one
recon = invert_mel(mel, n_iters=16)
err = np.abs(mel_spectrogram(recon).values - mel.values).mean()
print("inversion: ", recon.n_samples, "samples, mel L1", round(float(err), 3))
