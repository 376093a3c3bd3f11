"""Synthetic recording environments and paired training triplets.

An environment is a parametric (EQ, reverberation, noise) triple rendered
onto clean speech. The same rendering path powers corpus generation and the
content-side augmentation used during training. A builtin speech surrogate
(harmonic pulse trains with formant filtering plus shaped-noise bursts)
keeps the repo self-contained; real paired data laid out as
``<root>/<env_id>/<utterance_id>.wav`` loads through the same manifest.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve, sosfilt

from envdiff.audio import (
    SAMPLE_RATE,
    AudioSegment,
    MelSpectrogram,
    load_audio,
    mel_spectrogram,
    save_audio,
)

NOISE_KINDS = ("none", "white", "pink", "babble-surrogate")


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass
class EnvironmentSpec:
    """Parametric recording environment.

    Arguments
    ---------
    env_id : str
        Unique tag within a corpus.
    eq : list of (center_hz, gain_db, q)
        Peaking-filter sections, each gain within +-12 dB.
    rir_rt60 : float
        Reverberation time in seconds; 0 means anechoic.
    rir_direct_ratio : float
        Direct-impulse amplitude in (0, 1]; the decaying tail scales with
        its complement.
    noise_kind : str
        One of none, white, pink, babble-surrogate.
    snr_db : float
        Post-mix SNR of speech-active RMS against noise RMS.
    """

    env_id: str
    eq: list = field(default_factory=list)
    rir_rt60: float = 0.0
    rir_direct_ratio: float = 1.0
    noise_kind: str = "none"
    snr_db: float = 30.0

    def __post_init__(self):
        if not self.env_id:
            raise ValueError("env_id must be non-empty")
        if self.rir_rt60 < 0:
            raise ValueError(f"rir_rt60 must be >= 0, got {self.rir_rt60}")
        if not 0 < self.rir_direct_ratio <= 1:
            raise ValueError(
                f"rir_direct_ratio must be in (0, 1], got {self.rir_direct_ratio}"
            )
        if self.noise_kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise_kind {self.noise_kind!r}")
        if not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        self.eq = [(float(f), float(g), float(q)) for f, g, q in self.eq]
        for f, g, q in self.eq:
            if not 0 < f < SAMPLE_RATE / 2:
                raise ValueError(f"EQ center {f} Hz outside (0, Nyquist)")
            if abs(g) > 12.0:
                raise ValueError(f"EQ gain {g} dB outside +-12 dB")
            if q <= 0:
                raise ValueError(f"EQ Q must be positive, got {q}")


def _peaking_sos(center_hz: float, gain_db: float, q: float) -> np.ndarray:
    """RBJ cookbook peaking-EQ biquad as a single sos row."""
    A = 10.0 ** (gain_db / 40.0)
    w0 = 2.0 * math.pi * center_hz / SAMPLE_RATE
    alpha = math.sin(w0) / (2.0 * q)
    b = np.array([1 + alpha * A, -2 * math.cos(w0), 1 - alpha * A])
    a = np.array([1 + alpha / A, -2 * math.cos(w0), 1 - alpha / A])
    return np.concatenate([b / a[0], a / a[0]])


def _bandpass_sos(center_hz: float, q: float) -> np.ndarray:
    """RBJ bandpass biquad with unit peak gain."""
    w0 = 2.0 * math.pi * center_hz / SAMPLE_RATE
    alpha = math.sin(w0) / (2.0 * q)
    b = np.array([alpha, 0.0, -alpha])
    a = np.array([1 + alpha, -2 * math.cos(w0), 1 - alpha])
    return np.concatenate([b / a[0], a / a[0]])


def apply_eq(x: np.ndarray, eq) -> np.ndarray:
    """Cascade of peaking biquads; empty list is the identity."""
    if not eq:
        return x
    sos = np.stack([_peaking_sos(f, g, q) for f, g, q in eq])
    return sosfilt(sos, x)


def synth_rir(rt60: float, direct_ratio: float, length: int, seed) -> np.ndarray:
    """Synthetic room impulse response, peak-normalized to 1.

    A unit impulse at index 0 scaled by ``direct_ratio`` plus a Gaussian
    tail whose energy envelope decays 60 dB at ``rt60`` seconds. rt60 == 0
    yields a pure unit impulse.
    """
    if rt60 < 0:
        raise ValueError(f"rt60 must be >= 0, got {rt60}")
    if not 0 < direct_ratio <= 1:
        raise ValueError(f"direct_ratio must be in (0, 1], got {direct_ratio}")
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    ir = np.zeros(length)
    ir[0] = direct_ratio
    if rt60 > 0 and length > 1 and direct_ratio < 1:
        rng = _as_rng(seed)
        t = np.arange(1, length) / SAMPLE_RATE
        # amplitude decay 10^(-3 t / rt60) puts energy at -60 dB at rt60
        env = (1.0 - direct_ratio) * 10.0 ** (-3.0 * t / rt60)
        ir[1:] = env * rng.standard_normal(length - 1)
    peak = np.max(np.abs(ir))
    return ir / peak


def active_rms(x: np.ndarray, frame: int = 400, threshold_db: float = -40.0) -> float:
    """RMS over speech-active samples.

    A frame is active when its RMS is within ``threshold_db`` of the loudest
    frame. Returns 0 for all-silent input.
    """
    n = x.size - x.size % frame
    if n == 0:
        return float(np.sqrt(np.mean(x**2))) if x.size else 0.0
    frames = x[:n].reshape(-1, frame)
    rms = np.sqrt(np.mean(frames**2, axis=1))
    peak = rms.max()
    if peak == 0:
        return 0.0
    mask = rms > peak * 10.0 ** (threshold_db / 20.0)
    return float(np.sqrt(np.mean(frames[mask] ** 2)))


def make_noise(kind: str, n: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-RMS noise of the given kind and length."""
    if kind == "white":
        z = rng.standard_normal(n)
    elif kind == "pink":
        spec = np.fft.rfft(rng.standard_normal(n))
        f = np.arange(spec.size, dtype=np.float64)
        f[0] = 1.0
        z = np.fft.irfft(spec / np.sqrt(f), n=n)
    elif kind == "babble-surrogate":
        z = np.zeros(n)
        for _ in range(6):
            z += speech_surrogate(n / SAMPLE_RATE, rng)[:n]
    else:
        raise ValueError(f"cannot synthesize noise of kind {kind!r}")
    rms = np.sqrt(np.mean(z**2))
    return z / max(rms, 1e-12)


def mix_at_snr(speech: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    """Add noise scaled so speech-active RMS over noise RMS hits snr_db."""
    s_rms = active_rms(speech)
    n_rms = np.sqrt(np.mean(noise**2))
    if s_rms == 0 or n_rms == 0:
        return speech.copy()
    gain = s_rms / (n_rms * 10.0 ** (snr_db / 20.0))
    return speech + gain * noise


def _fit_noise(noise: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    if noise.size >= n:
        off = int(rng.integers(0, noise.size - n + 1))
        return noise[off : off + n]
    reps = -(-n // noise.size)
    return np.tile(noise, reps)[:n]


def apply_environment(clean: AudioSegment, env: EnvironmentSpec, seed) -> AudioSegment:
    """Render a clean segment through an environment.

    EQ biquads, then convolution with the synthetic RIR truncated to the
    clean length, then noise mixed at the environment's SNR. The output is
    rescaled when its peak exceeds 1.
    """
    rng = _as_rng(seed)
    x = apply_eq(clean.samples, env.eq)
    if env.rir_rt60 > 0:
        ir_len = min(clean.n_samples, int(round(1.3 * env.rir_rt60 * SAMPLE_RATE)) + 1)
        ir = synth_rir(env.rir_rt60, env.rir_direct_ratio, ir_len, rng)
        x = fftconvolve(x, ir)[: clean.n_samples]
    if env.noise_kind != "none":
        x = mix_at_snr(x, make_noise(env.noise_kind, x.size, rng), env.snr_db)
    peak = np.max(np.abs(x)) if x.size else 0.0
    if peak > 1.0:
        x = x / peak
    return AudioSegment(x, SAMPLE_RATE)


def augment_content(
    clean: AudioSegment,
    ir_pool,
    noise_pool,
    snr_range: tuple,
    seed,
) -> AudioSegment:
    """Content-side augmentation: random IR, random noise at a random SNR.

    Used only to produce training-time X, never Y or R.
    """
    if len(ir_pool) == 0 or len(noise_pool) == 0:
        raise ValueError("augmentation pools must be non-empty")
    lo, hi = float(snr_range[0]), float(snr_range[1])
    if lo > hi:
        raise ValueError(f"snr_range lo {lo} exceeds hi {hi}")
    rng = _as_rng(seed)
    ir = ir_pool[int(rng.integers(len(ir_pool)))]
    noise = noise_pool[int(rng.integers(len(noise_pool)))]
    snr = float(rng.uniform(lo, hi))
    x = fftconvolve(clean.samples, ir)[: clean.n_samples]
    x = mix_at_snr(x, _fit_noise(noise, x.size, rng), snr)
    peak = np.max(np.abs(x)) if x.size else 0.0
    if peak > 1.0:
        x = x / peak
    return AudioSegment(x, SAMPLE_RATE)


def default_ir_pool(rng: np.random.Generator, k: int = 6) -> list:
    """Synthetic IRs with rt60 in [0.1, 0.9] s, direct ratio in [0.3, 0.9]."""
    pool = []
    for _ in range(k):
        rt60 = float(rng.uniform(0.1, 0.9))
        direct = float(rng.uniform(0.3, 0.9))
        length = int(round(1.3 * rt60 * SAMPLE_RATE)) + 1
        pool.append(synth_rir(rt60, direct, length, rng))
    return pool


def default_noise_pool(
    rng: np.random.Generator, seconds: float = 4.0, kinds=("white", "pink", "babble-surrogate")
) -> list:
    """One unit-RMS clip per requested noise kind."""
    n = int(seconds * SAMPLE_RATE)
    return [make_noise(kind, n, rng) for kind in kinds]


# ---------------------------------------------------------------------------
# builtin clean-speech surrogate


def speech_surrogate(
    seconds: float, rng: np.random.Generator, base_pitch: float | None = None
) -> np.ndarray:
    """Speech-like signal: pitched pulse train through formant resonators,
    syllabic amplitude modulation, and shaped-noise consonant bursts."""
    n = int(round(seconds * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    if base_pitch is None:
        base_pitch = float(rng.uniform(95.0, 220.0))

    # slow pitch contour around the base, +-4 semitones
    k = max(int(seconds * 2) + 2, 4)
    knots = rng.uniform(-4.0, 4.0, size=k)
    contour = np.interp(np.linspace(0, k - 1, n), np.arange(k), knots)
    f0 = base_pitch * 2.0 ** (contour / 12.0)

    # glottal pulse train by phase accumulation
    phase = np.cumsum(f0) / SAMPLE_RATE
    pulses = np.zeros(n)
    marks = np.nonzero(np.diff(np.floor(phase)) > 0)[0]
    pulses[marks] = 1.0 + 0.2 * rng.standard_normal(marks.size)

    # three formant resonators at randomized centers
    voiced = np.zeros(n)
    for lo, hi, gain in ((350, 850, 1.0), (900, 2200, 0.6), (2300, 3200, 0.35)):
        sos = _bandpass_sos(float(rng.uniform(lo, hi)), 4.0)
        voiced += gain * sosfilt(sos[None, :], pulses)

    # syllabic envelope, never fully closed so the signal stays active
    syl = 0.5 * (1 + np.sin(2 * np.pi * float(rng.uniform(2.5, 4.5)) * t + rng.uniform(0, 6.28)))
    env = 0.25 + 0.75 * syl
    sig = voiced * env

    # consonant bursts: short high-frequency noise packets
    n_bursts = max(1, int(seconds * 2.5))
    for _ in range(n_bursts):
        dur = int(rng.uniform(0.02, 0.06) * SAMPLE_RATE)
        start = int(rng.integers(0, max(n - dur, 1)))
        burst = rng.standard_normal(dur)
        sos = _bandpass_sos(float(rng.uniform(2500, 6000)), 1.0)
        burst = sosfilt(sos[None, :], burst)
        win = np.hanning(dur)
        sig[start : start + dur] += 0.5 * burst * win

    peak = np.max(np.abs(sig))
    return 0.7 * sig / max(peak, 1e-9)


def clean_environment() -> EnvironmentSpec:
    """The identity environment every corpus must contain."""
    return EnvironmentSpec("clean")


def default_environments(n_envs: int = 3, seed: int = 0) -> list:
    """Clean plus n_envs - 1 distinct strong environments."""
    if n_envs < 2:
        raise ValueError("need at least 2 environments including clean")
    fixed = [
        clean_environment(),
        EnvironmentSpec(
            "warm_room",
            eq=[(250.0, 6.0, 1.0), (4000.0, -8.0, 1.0)],
            rir_rt60=0.35,
            rir_direct_ratio=0.5,
            noise_kind="white",
            snr_db=12.0,
        ),
        EnvironmentSpec(
            "bright_hall",
            eq=[(120.0, -7.0, 0.8), (3000.0, 7.0, 1.2)],
            rir_rt60=0.7,
            rir_direct_ratio=0.35,
            noise_kind="pink",
            snr_db=8.0,
        ),
    ]
    envs = fixed[:n_envs]
    rng = np.random.default_rng(seed)
    kinds = ("white", "pink", "babble-surrogate")
    while len(envs) < n_envs:
        i = len(envs)
        envs.append(
            EnvironmentSpec(
                f"env{i:02d}",
                eq=[
                    (float(rng.uniform(150, 600)), float(rng.uniform(-10, 10)), 1.0),
                    (float(rng.uniform(1500, 6000)), float(rng.uniform(-10, 10)), 1.0),
                ],
                rir_rt60=float(rng.uniform(0.15, 0.8)),
                rir_direct_ratio=float(rng.uniform(0.3, 0.8)),
                noise_kind=kinds[i % 3],
                snr_db=float(rng.uniform(6, 18)),
            )
        )
    return envs


# ---------------------------------------------------------------------------
# corpus manifest


@dataclass
class ManifestEntry:
    utterance_id: str
    env_id: str
    speaker_id: str
    split: str
    relpath: str


@dataclass
class CorpusManifest:
    """Paired corpus index plus the environment definitions."""

    entries: list
    environments: list
    root: Path

    def __post_init__(self):
        self.root = Path(self.root)
        seen = set()
        for e in self.entries:
            key = (e.utterance_id, e.env_id)
            if key in seen:
                raise ValueError(f"duplicate manifest entry {key}")
            seen.add(key)
        env_ids = {env.env_id for env in self.environments}
        if len(env_ids) != len(self.environments):
            raise ValueError("duplicate env_id in environments")
        utts = {e.utterance_id for e in self.entries}
        clean = {e.utterance_id for e in self.entries if e.env_id == "clean"}
        missing = utts - clean
        if missing:
            raise ValueError(f"utterances missing a clean rendering: {sorted(missing)[:3]}")
        self._index = {(e.utterance_id, e.env_id): e for e in self.entries}

    @property
    def env_ids(self) -> list:
        return sorted({e.env_id for e in self.entries})

    def utterances(self, split: str | None = None, env_id: str | None = None) -> list:
        out = {
            e.utterance_id
            for e in self.entries
            if (split is None or e.split == split)
            and (env_id is None or e.env_id == env_id)
        }
        return sorted(out)

    def entry(self, utterance_id: str, env_id: str) -> ManifestEntry:
        try:
            return self._index[(utterance_id, env_id)]
        except KeyError:
            raise KeyError(f"no entry for ({utterance_id}, {env_id})") from None

    def path(self, entry: ManifestEntry) -> Path:
        return self.root / entry.relpath

    def environment(self, env_id: str) -> EnvironmentSpec:
        for env in self.environments:
            if env.env_id == env_id:
                return env
        raise KeyError(f"no environment {env_id}")


MANIFEST_NAME = "manifest.tsv"
ENVIRONMENTS_NAME = "environments.json"
_MANIFEST_COLUMNS = ("utterance_id", "env_id", "speaker_id", "split", "relpath")


def write_manifest(manifest: CorpusManifest, out_dir) -> Path:
    out_dir = Path(out_dir)
    lines = ["\t".join(_MANIFEST_COLUMNS)]
    for e in sorted(manifest.entries, key=lambda e: (e.utterance_id, e.env_id)):
        lines.append("\t".join((e.utterance_id, e.env_id, e.speaker_id, e.split, e.relpath)))
    path = out_dir / MANIFEST_NAME
    path.write_text("\n".join(lines) + "\n")
    payload = {"environments": [asdict(env) for env in manifest.environments]}
    (out_dir / ENVIRONMENTS_NAME).write_text(json.dumps(payload, indent=2) + "\n")
    return path


def load_manifest(path) -> CorpusManifest:
    """Read a manifest.tsv plus its environments.json sidecar."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    lines = path.read_text().splitlines()
    if not lines or tuple(lines[0].split("\t")) != _MANIFEST_COLUMNS:
        raise ValueError(f"bad manifest header in {path}")
    entries = []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        parts = ln.split("\t")
        if len(parts) != len(_MANIFEST_COLUMNS):
            raise ValueError(f"bad manifest row: {ln!r}")
        entries.append(ManifestEntry(*parts))
    env_path = path.parent / ENVIRONMENTS_NAME
    environments = []
    if env_path.exists():
        payload = json.loads(env_path.read_text())
        for d in payload["environments"]:
            d = dict(d)
            d["eq"] = [tuple(sec) for sec in d.get("eq", [])]
            environments.append(EnvironmentSpec(**d))
    return CorpusManifest(entries, environments, path.parent)


def generate_corpus(
    clean_source,
    envs: list,
    out_dir,
    seed: int,
    n_utterances: int = 50,
    utt_seconds: float = 4.0,
    n_speakers: int = 5,
    test_fraction: float = 0.2,
) -> CorpusManifest:
    """Render every utterance under every environment and write a manifest.

    ``clean_source`` is either a directory of WAV files or the string
    ``"builtin"`` for the speech surrogate. Rendering is deterministic per
    (seed, utterance, environment), so reruns are byte-identical.
    """
    env_ids = [env.env_id for env in envs]
    if len(envs) < 2 or "clean" not in env_ids:
        raise ValueError("need at least 2 environments including 'clean'")
    if len(set(env_ids)) != len(env_ids):
        raise ValueError("duplicate env_id")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for env in envs:
            (out_dir / env.env_id).mkdir(exist_ok=True)
    except OSError:
        raise

    # assemble clean utterances
    cleans: list[tuple[str, str, AudioSegment]] = []
    if isinstance(clean_source, (str, Path)) and str(clean_source) != "builtin":
        files = sorted(Path(clean_source).glob("*.wav"))
        if not files:
            raise ValueError(f"no WAV files in {clean_source}")
        for f in files:
            utt = f.stem
            speaker = utt.split("_")[0]
            cleans.append((utt, speaker, load_audio(f)))
    else:
        root_seq = np.random.SeedSequence(seed)
        pitches = np.random.default_rng(root_seq.spawn(1)[0]).uniform(
            95.0, 230.0, size=n_speakers
        )
        for i in range(n_utterances):
            rng = np.random.default_rng(np.random.SeedSequence([seed, 1000 + i]))
            spk = i % n_speakers
            sig = speech_surrogate(utt_seconds, rng, base_pitch=float(pitches[spk]))
            cleans.append((f"utt{i:03d}", f"spk{spk}", AudioSegment(sig)))

    n_test = int(round(test_fraction * len(cleans)))
    entries = []
    for i, (utt, speaker, clean) in enumerate(cleans):
        split = "test" if i >= len(cleans) - n_test else "train"
        for j, env in enumerate(envs):
            rendered = apply_environment(
                clean, env, np.random.SeedSequence([seed, i, j])
            )
            rel = f"{env.env_id}/{utt}.wav"
            save_audio(rendered, out_dir / rel)
            entries.append(ManifestEntry(utt, env.env_id, speaker, split, rel))

    manifest = CorpusManifest(entries, list(envs), out_dir)
    write_manifest(manifest, out_dir)
    return manifest


# ---------------------------------------------------------------------------
# triplet sampling


@dataclass
class TripletDraw:
    """Index-level description of one (X, R, Y) draw."""

    content: ManifestEntry | None  # None when X is augmented clean speech
    reference: ManifestEntry
    target: ManifestEntry
    augmented: bool
    clean_content: ManifestEntry  # clean rendering of the content utterance

    @property
    def utterance_id(self) -> str:
        return self.target.utterance_id


TASKS = ("env_to_clean", "clean_to_env", "env_to_env", "train")


def draw_triplet(
    manifest: CorpusManifest,
    task: str,
    rng: np.random.Generator,
    p_aug: float = 0.5,
    split: str | None = None,
) -> TripletDraw:
    """Sampling policy: X shares the utterance with Y, R shares the
    environment with Y under a different utterance."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    env_ids = manifest.env_ids
    others = [e for e in env_ids if e != "clean"]
    if not others:
        raise ValueError("manifest has no non-clean environments")

    if task == "env_to_clean":
        e_y = "clean"
        e_x = str(rng.choice(others))
    elif task == "clean_to_env":
        e_y = str(rng.choice(others))
        e_x = "clean"
    elif task == "env_to_env":
        if len(others) < 2:
            raise ValueError("env_to_env needs at least 2 non-clean environments")
        e_y = str(rng.choice(others))
        e_x = str(rng.choice([e for e in others if e != e_y]))
    else:
        e_y = str(rng.choice(env_ids))
        e_x_pool = [e for e in env_ids if e != e_y]
        e_x = str(rng.choice(e_x_pool))

    utts = manifest.utterances(split=split, env_id=e_y)
    if len(utts) < 2:
        raise ValueError(
            f"need >= 2 utterances in env {e_y} (split={split}) for a reference"
        )
    u = str(rng.choice(utts))
    u_ref = str(rng.choice([x for x in utts if x != u]))

    augmented = task == "train" and float(rng.uniform()) < p_aug
    target = manifest.entry(u, e_y)
    clean_content = manifest.entry(u, "clean")
    content = None if augmented else manifest.entry(u, e_x)
    reference = manifest.entry(u_ref, e_y)
    return TripletDraw(content, reference, target, augmented, clean_content)


def render_triplet(
    manifest: CorpusManifest,
    draw: TripletDraw,
    rng: np.random.Generator,
    aug_pools: tuple | None = None,
    snr_range: tuple = (0.0, 30.0),
) -> tuple:
    """Load audio for a draw; returns (x, r, y) AudioSegments."""
    y = load_audio(manifest.path(draw.target))
    r = load_audio(manifest.path(draw.reference))
    if draw.augmented:
        clean = load_audio(manifest.path(draw.clean_content))
        if aug_pools is None:
            pool_rng = np.random.default_rng(0)
            aug_pools = (
                default_ir_pool(pool_rng, k=2),
                default_noise_pool(pool_rng, kinds=("white", "pink")),
            )
        x = augment_content(clean, aug_pools[0], aug_pools[1], snr_range, rng)
    else:
        x = load_audio(manifest.path(draw.content))
    return x, r, y


def sample_triplet(
    manifest: CorpusManifest,
    task: str,
    seed,
    p_aug: float = 0.5,
    split: str | None = None,
    aug_pools: tuple | None = None,
) -> tuple:
    """Draw one (X, R, Y) mel triplet under the task's pairing policy."""
    rng = _as_rng(seed)
    draw = draw_triplet(manifest, task, rng, p_aug=p_aug, split=split)
    x, r, y = render_triplet(manifest, draw, rng, aug_pools=aug_pools)
    return mel_spectrogram(x), mel_spectrogram(r), mel_spectrogram(y)
