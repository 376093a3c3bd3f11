"""Audio I/O and time-frequency transforms on a fixed 16 kHz rail.

Everything downstream (synthesis, training, metrics) consumes the types and
constants defined here: mono 16 kHz waveforms, 513-bin centered STFTs, and
80-channel log-mel grids with min-max normalization to [-1, 1].
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

SAMPLE_RATE = 16000
N_FFT = 1024
HOP = 256
N_FREQ = N_FFT // 2 + 1
N_MELS = 80
FMIN = 0.0
FMAX = 8000.0
MEL_FLOOR = 1e-5
LOG_FLOOR = math.log(MEL_FLOOR)

_MEL_MAGIC = b"ENVDMEL1"


@dataclass
class AudioSegment:
    """Mono waveform at a fixed sample rate.

    Arguments
    ---------
    samples : np.ndarray
        1-D float array of samples.
    sample_rate : int
        Samples per second.
    """

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain non-finite values")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def n_samples(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass
class NormStats:
    """Min-max constants for mel normalization; persisted with checkpoints."""

    min_log_mel: float
    max_log_mel: float

    def __post_init__(self):
        self.min_log_mel = float(self.min_log_mel)
        self.max_log_mel = float(self.max_log_mel)
        if not (math.isfinite(self.min_log_mel) and math.isfinite(self.max_log_mel)):
            raise ValueError("NormStats values must be finite")
        if self.max_log_mel <= self.min_log_mel:
            raise ValueError(
                f"max_log_mel ({self.max_log_mel}) must exceed "
                f"min_log_mel ({self.min_log_mel})"
            )


@dataclass
class MelSpectrogram:
    """80xT grid of log-mel values plus normalization state.

    Arguments
    ---------
    values : np.ndarray
        (80, T) float array. Natural-log mel magnitudes when unnormalized,
        [-1, 1] values when normalized.
    normalized : bool
        Whether ``values`` are in the min-max normalized domain.
    norm_stats : NormStats, optional
        The stats used to normalize, kept for round trips.
    """

    values: np.ndarray
    normalized: bool = False
    norm_stats: NormStats | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"values must be 2-D, got shape {self.values.shape}")
        if self.values.shape[0] != N_MELS:
            raise ValueError(
                f"expected {N_MELS} mel channels, got {self.values.shape[0]}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("mel values contain non-finite entries")

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def load_audio(path) -> AudioSegment:
    """Read a WAV file as mono 16 kHz float with peak at most 1.0.

    Channels are averaged, the signal is resampled with a windowed-sinc
    polyphase filter, and the result is peak-normalized only when the peak
    exceeds 1.0.
    """
    path = Path(path)
    try:
        sr, data = wavfile.read(path)
    except OSError:
        raise
    except Exception as exc:
        raise OSError(f"cannot decode {path}: {exc}") from exc
    if data.size == 0:
        raise ValueError(f"zero-length audio: {path}")

    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        # covers 24-bit PCM, which scipy upshifts into int32
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise OSError(f"unsupported WAV sample format {data.dtype} in {path}")

    if x.ndim == 2:
        x = x.mean(axis=1)

    if sr != SAMPLE_RATE:
        g = math.gcd(SAMPLE_RATE, int(sr))
        x = resample_poly(x, SAMPLE_RATE // g, int(sr) // g)

    peak = np.max(np.abs(x)) if x.size else 0.0
    if peak > 1.0:
        x = x / peak
    return AudioSegment(x, SAMPLE_RATE)


def save_audio(a: AudioSegment, path) -> None:
    """Write a segment as 16-bit PCM WAV."""
    x = np.clip(a.samples, -1.0, 1.0)
    pcm = np.round(x * 32767.0).astype(np.int16)
    wavfile.write(Path(path), a.sample_rate, pcm)


def segment(
    a: AudioSegment,
    target_seconds: float = 4.0,
    mode: str = "pad",
    rng: np.random.Generator | None = None,
) -> AudioSegment:
    """Cut or zero-pad a segment to an exact duration.

    Shorter inputs are zero-padded at the end in every mode. Longer inputs
    are cropped: ``random_crop`` draws the offset from ``rng``, ``center``
    takes the middle, ``pad`` takes the head.
    """
    if target_seconds <= 0:
        raise ValueError(f"target_seconds must be positive, got {target_seconds}")
    if mode not in ("random_crop", "pad", "center"):
        raise ValueError(f"unknown segment mode {mode!r}")
    n_target = int(round(target_seconds * a.sample_rate))
    x = a.samples
    if x.size < n_target:
        x = np.concatenate([x, np.zeros(n_target - x.size)])
    elif x.size > n_target:
        if mode == "random_crop":
            if rng is None:
                raise ValueError("random_crop mode requires an rng")
            off = int(rng.integers(0, x.size - n_target + 1))
        elif mode == "center":
            off = (x.size - n_target) // 2
        else:
            off = 0
        x = x[off : off + n_target]
    return AudioSegment(x.copy(), a.sample_rate)


def _reflect_pad(x: np.ndarray, pad: int) -> np.ndarray:
    """Reflect-pad without edge repetition, total for any length >= 1."""
    n = x.size
    if n == 1:
        return np.full(n + 2 * pad, x[0], dtype=x.dtype)
    period = 2 * (n - 1)
    idx = np.arange(-pad, n + pad) % period
    idx = np.where(idx >= n, period - idx, idx)
    return x[idx]


@lru_cache(maxsize=4)
def _hann(n_fft: int) -> np.ndarray:
    # periodic Hann, the STFT convention
    k = np.arange(n_fft)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / n_fft))


def frame_count(n_samples: int) -> int:
    """Frame-count law for the centered STFT: floor(n/hop) + 1."""
    return n_samples // HOP + 1


def stft(a: AudioSegment) -> np.ndarray:
    """Centered STFT: Hann 1024, hop 256, reflect padding of 512 per edge.

    Returns
    -------
    np.ndarray
        Complex grid of shape (513, floor(n_samples/256) + 1).
    """
    x = a.samples
    pad = N_FFT // 2
    xp = _reflect_pad(x, pad)
    n_frames = frame_count(x.size)
    frames = np.lib.stride_tricks.sliding_window_view(xp, N_FFT)[::HOP][:n_frames]
    return np.fft.rfft(frames * _hann(N_FFT), axis=-1).T


def istft(S: np.ndarray) -> np.ndarray:
    """Invert ``stft`` by windowed overlap-add; returns 256*(T-1) samples."""
    if S.ndim != 2 or S.shape[0] != N_FREQ:
        raise ValueError(f"expected ({N_FREQ}, T) grid, got {S.shape}")
    n_frames = S.shape[1]
    w = _hann(N_FFT)
    frames = np.fft.irfft(S.T, n=N_FFT, axis=-1) * w
    total = (n_frames - 1) * HOP + N_FFT
    out = np.zeros(total)
    wsum = np.zeros(total)
    for i in range(n_frames):
        out[i * HOP : i * HOP + N_FFT] += frames[i]
        wsum[i * HOP : i * HOP + N_FFT] += w * w
    out = np.where(wsum > 1e-10, out / np.maximum(wsum, 1e-10), 0.0)
    pad = N_FFT // 2
    return out[pad : pad + HOP * (n_frames - 1)]


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=4)
def mel_filterbank(
    n_mels: int = N_MELS,
    n_fft: int = N_FFT,
    sample_rate: int = SAMPLE_RATE,
    fmin: float = FMIN,
    fmax: float = FMAX,
) -> np.ndarray:
    """Triangular mel bank of shape (n_mels, n_fft//2 + 1), peak-1 filters."""
    edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    bin_hz = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    lo, ctr, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (bin_hz[None, :] - lo) / np.maximum(ctr - lo, 1e-12)
    down = (hi - bin_hz[None, :]) / np.maximum(hi - ctr, 1e-12)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb.setflags(write=False)
    return fb


def mel_centers(
    n_mels: int = N_MELS, fmin: float = FMIN, fmax: float = FMAX
) -> np.ndarray:
    """Center frequencies (Hz) of the triangular mel filters."""
    edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    return edges[1:-1]


def mel_spectrogram(a: AudioSegment) -> MelSpectrogram:
    """Log-mel grid: |STFT| through the mel bank, log(max(m, 1e-5))."""
    mag = np.abs(stft(a))
    m = mel_filterbank() @ mag
    return MelSpectrogram(np.log(np.maximum(m, MEL_FLOOR)), normalized=False)


def normalize(M: MelSpectrogram, stats: NormStats) -> MelSpectrogram:
    """Min-max map to [-1, 1] with clamping: v' = 2(v - min)/(max - min) - 1."""
    if M.normalized:
        raise ValueError("mel is already normalized")
    span = stats.max_log_mel - stats.min_log_mel
    if span <= 0:
        raise ValueError("degenerate NormStats")
    v = 2.0 * (M.values - stats.min_log_mel) / span - 1.0
    return MelSpectrogram(np.clip(v, -1.0, 1.0), normalized=True, norm_stats=stats)


def denormalize(M: MelSpectrogram, stats: NormStats | None = None) -> MelSpectrogram:
    """Invert the affine map of ``normalize`` (clamping is not inverted)."""
    if not M.normalized:
        raise ValueError("mel is not normalized")
    st = stats if stats is not None else M.norm_stats
    if st is None:
        raise ValueError("no NormStats available for denormalization")
    span = st.max_log_mel - st.min_log_mel
    v = (M.values + 1.0) / 2.0 * span + st.min_log_mel
    return MelSpectrogram(v, normalized=False)


def compute_norm_stats(mels) -> NormStats:
    """Corpus stats: min fixed at log(1e-5), max taken over all grids."""
    vmax = -np.inf
    for m in mels:
        if m.normalized:
            raise ValueError("norm stats must be computed on unnormalized mels")
        vmax = max(vmax, float(m.values.max()))
    if not np.isfinite(vmax) or vmax <= LOG_FLOOR:
        raise ValueError("corpus max does not exceed the log floor")
    return NormStats(LOG_FLOOR, vmax)


@lru_cache(maxsize=2)
def _mel_pinv(n_mels: int, n_fft: int) -> np.ndarray:
    p = np.linalg.pinv(mel_filterbank(n_mels, n_fft))
    p.setflags(write=False)
    return p


def invert_mel(M: MelSpectrogram, n_iters: int = 60) -> AudioSegment:
    """Surrogate waveform from an unnormalized log-mel grid.

    Exponentiates, maps back to a linear-frequency magnitude estimate via the
    filterbank pseudo-inverse (clamped non-negative), then runs Griffin-Lim
    style phase retrieval for ``n_iters``. Output length is 256*(T-1).
    """
    if M.normalized:
        raise ValueError("invert_mel expects an unnormalized mel")
    mag = np.clip(_mel_pinv(N_MELS, N_FFT) @ np.exp(M.values), 0.0, None)
    S = mag.astype(np.complex128)  # zero initial phase
    x = istft(S)
    for _ in range(n_iters):
        phase = np.angle(stft(AudioSegment(x)))
        x = istft(mag * np.exp(1j * phase))
    return AudioSegment(x, SAMPLE_RATE)


def save_mel(M: MelSpectrogram, path) -> None:
    """Write the documented binary mel format (see docs/mel-format.md)."""
    st = M.norm_stats
    mn = st.min_log_mel if st is not None else math.nan
    mx = st.max_log_mel if st is not None else math.nan
    header = struct.pack(
        "<8sIIB3xdd",
        _MEL_MAGIC,
        M.values.shape[0],
        M.values.shape[1],
        1 if M.normalized else 0,
        mn,
        mx,
    )
    with open(Path(path), "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(M.values, dtype="<f4").tobytes())


def load_mel(path) -> MelSpectrogram:
    """Read the binary mel format written by ``save_mel``."""
    raw = Path(path).read_bytes()
    head = struct.calcsize("<8sIIB3xdd")
    if len(raw) < head:
        raise OSError(f"truncated mel file: {path}")
    magic, f, t, norm_flag, mn, mx = struct.unpack("<8sIIB3xdd", raw[:head])
    if magic != _MEL_MAGIC:
        raise OSError(f"bad magic in mel file: {path}")
    if len(raw) - head != 4 * f * t:
        raise OSError(f"mel payload size mismatch in {path}")
    body = np.frombuffer(raw[head:], dtype="<f4")
    stats = None
    if math.isfinite(mn) and math.isfinite(mx):
        stats = NormStats(mn, mx)
    values = body.reshape(f, t).astype(np.float64)
    return MelSpectrogram(values, normalized=bool(norm_flag), norm_stats=stats)
