"""Objective metrics, the three test-case harnesses, and embedding export."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from envdiff.audio import (
    AudioSegment,
    MelSpectrogram,
    denormalize,
    invert_mel,
    load_audio,
    mel_spectrogram,
    normalize,
    stft,
)
from envdiff.nets import model_from_checkpoint
from envdiff.synthdata import CorpusManifest, draw_triplet, render_triplet
from envdiff.training import transfer_arrays

EVAL_CASES = ("env_to_clean", "clean_to_env", "env_to_env")

# Ratio clamp keeping scale-invariant scores inside [-120, 120] dB, so a
# perfect estimate lands on the same ceiling at every signal level.
_RATIO_FLOOR = 1e-12


def lsd(a: np.ndarray, b: np.ndarray) -> float:
    """Mean over frames of the RMS log-spectral difference per frame.

    Domain-agnostic: callers pass grids already in their log domain.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape != b.shape:
        raise ValueError(f"grids must share one 2-D shape, got {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(np.sqrt(np.mean(d * d, axis=0))))


def log10_mel_grid(mel: MelSpectrogram) -> np.ndarray:
    """Unnormalized natural-log mel rebased to log10 for LSD."""
    if mel.normalized:
        raise ValueError("pass an unnormalized log-mel grid")
    return mel.values / math.log(10.0)


def log10_stft_grid(a: AudioSegment, floor: float = 1e-5) -> np.ndarray:
    """Log10 magnitude STFT grid under the shared analysis settings."""
    return np.log10(np.maximum(np.abs(stft(a)), floor))


def ssim(a: np.ndarray, b: np.ndarray, window: int = 7, dynamic_range: float = 2.0) -> float:
    """Mean structural similarity over valid uniform windows.

    Population (biased) window statistics keep every per-window score inside
    [-1, 1]; C1 = (0.01 L)^2 and C2 = (0.03 L)^2 with L the value range.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape != b.shape:
        raise ValueError(f"grids must share one 2-D shape, got {a.shape} vs {b.shape}")
    if min(a.shape) < window:
        raise ValueError(f"grid {a.shape} smaller than the {window}x{window} window")
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    wa = np.lib.stride_tricks.sliding_window_view(a, (window, window))
    wb = np.lib.stride_tricks.sliding_window_view(b, (window, window))
    mu_a = wa.mean(axis=(2, 3))
    mu_b = wb.mean(axis=(2, 3))
    var_a = (wa * wa).mean(axis=(2, 3)) - mu_a * mu_a
    var_b = (wb * wb).mean(axis=(2, 3)) - mu_b * mu_b
    cov = (wa * wb).mean(axis=(2, 3)) - mu_a * mu_b
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )
    return float(score.mean())


def _scale_invariant_ratio_db(s_hat: np.ndarray, s: np.ndarray) -> float:
    s_energy = float(s @ s)
    if s_energy == 0.0:
        raise ValueError("reference signal is all zeros")
    alpha = float(s_hat @ s) / s_energy
    target = alpha * s
    err = s_hat - target
    num = float(target @ target)
    den = float(err @ err)
    if den <= num * _RATIO_FLOOR:
        return 120.0
    if num <= den * _RATIO_FLOOR:
        return -120.0
    return 10.0 * math.log10(num / den)


def sisnr(s_hat, s) -> float:
    """Scale-invariant SNR in dB: project, split, compare energies."""
    s_hat = np.asarray(s_hat, dtype=np.float64).ravel()
    s = np.asarray(s, dtype=np.float64).ravel()
    if s_hat.shape != s.shape:
        raise ValueError(f"length mismatch: {s_hat.size} vs {s.size}")
    return _scale_invariant_ratio_db(s_hat, s)


def sispnr(s_hat: AudioSegment, s: AudioSegment) -> float:
    """The same ratio on flattened magnitude STFT grids (phase-blind)."""
    if s_hat.n_samples != s.n_samples:
        raise ValueError(f"length mismatch: {s_hat.n_samples} vs {s.n_samples}")
    a = np.abs(stft(s_hat)).ravel()
    b = np.abs(stft(s)).ravel()
    return _scale_invariant_ratio_db(a, b)


@dataclass
class EvalRow:
    """Per-pair metrics; waveform scores only where the case defines them."""

    pair_id: str
    lsd: float
    ssim: float
    unproc_lsd: float
    unproc_ssim: float
    sispnr: Optional[float] = None
    sisnr: Optional[float] = None


def _mean(rows, attr) -> Optional[float]:
    vals = [getattr(r, attr) for r in rows]
    if any(v is None for v in vals):
        return None
    return float(np.mean(vals))


@dataclass
class EvalReport:
    """Per-pair rows plus aggregate means and the two anchor rows."""

    test_case: str
    lsd_domain: str
    rows: list[EvalRow]
    baselines: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.rows:
            raise ValueError("a report needs at least one row")
        self.rows = sorted(self.rows, key=lambda r: r.pair_id)

    @property
    def n_pairs(self) -> int:
        return len(self.rows)

    def aggregates(self) -> dict:
        return {
            k: _mean(self.rows, k)
            for k in ("lsd", "ssim", "unproc_lsd", "unproc_ssim", "sispnr", "sisnr")
        }

    def improvement_fraction(self) -> float:
        """Fraction of pairs where the model beats the unprocessed input on LSD."""
        return float(np.mean([r.lsd < r.unproc_lsd for r in self.rows]))

    def to_tsv(self) -> str:
        def fmt(v):
            return "NA" if v is None else f"{v:.6g}"

        lines = [
            f"# test_case: {self.test_case}",
            f"# lsd_domain: {self.lsd_domain}",
            f"# n_pairs: {self.n_pairs}",
            "pair_id\tlsd\tssim\tsispnr\tsisnr\tpesq",
        ]
        for r in self.rows:
            lines.append(
                f"{r.pair_id}\t{fmt(r.lsd)}\t{fmt(r.ssim)}\t{fmt(r.sispnr)}\t{fmt(r.sisnr)}\tNA"
            )
        agg = self.aggregates()
        lines.append(
            "# aggregate model"
            f"\tlsd={fmt(agg['lsd'])}\tssim={fmt(agg['ssim'])}"
            f"\tsispnr={fmt(agg['sispnr'])}\tsisnr={fmt(agg['sisnr'])}"
        )
        for name in ("unprocessed", "target_mel"):
            if name in self.baselines:
                b = self.baselines[name]
                parts = "\t".join(f"{k}={fmt(v)}" for k, v in sorted(b.items()))
                lines.append(f"# aggregate {name}\t{parts}")
        return "\n".join(lines) + "\n"


def write_report(report: EvalReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_tsv())
    return path


def evaluate_testcase(
    manifest: CorpusManifest,
    case: str,
    checkpoint,
    n_pairs: int,
    seed: int = 0,
    split: str = "test",
    gl_iters: int = 32,
) -> EvalReport:
    """Sample pairs under one test case, run transfer, score against truth.

    Every report carries the Unprocessed anchor (input scored as-is) and the
    Target-Mel anchor (ground truth cycled through waveform inversion and
    re-analysis), bracketing what the model can achieve.
    """
    if case not in EVAL_CASES:
        raise ValueError(f"case must be one of {EVAL_CASES}")
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    model, stats, sched = model_from_checkpoint(checkpoint)

    rows = []
    unproc_rows = []
    ceiling_rows = []
    width = max(3, len(str(n_pairs - 1)))
    for i in range(n_pairs):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        draw = draw_triplet(manifest, case, rng, split=split)
        x_wav, r_wav, y_wav = render_triplet(manifest, draw, rng)
        x_mel = normalize(mel_spectrogram(x_wav), stats)
        r_mel = normalize(mel_spectrogram(r_wav), stats)
        y_mel = normalize(mel_spectrogram(y_wav), stats)

        sample_seed = int(np.random.SeedSequence([seed, i, 1]).generate_state(1)[0])
        y_hat_norm = transfer_arrays(model, sched, x_mel.values, r_mel.values, sample_seed)
        y_hat = denormalize(
            MelSpectrogram(y_hat_norm, normalized=True, norm_stats=stats), stats
        )
        y_log10 = log10_mel_grid(denormalize(y_mel, stats))
        x_log10 = log10_mel_grid(denormalize(x_mel, stats))

        pair_id = f"pair{i:0{width}d}"
        row = EvalRow(
            pair_id=pair_id,
            lsd=lsd(log10_mel_grid(y_hat), y_log10),
            ssim=ssim(y_hat_norm, y_mel.values),
            unproc_lsd=lsd(x_log10, y_log10),
            unproc_ssim=ssim(x_mel.values, y_mel.values),
        )
        ceil_wav = invert_mel(denormalize(y_mel, stats), n_iters=gl_iters)
        ceil_mel = normalize(mel_spectrogram(ceil_wav), stats)
        ceiling = {
            "lsd": lsd(log10_mel_grid(denormalize(ceil_mel, stats)), y_log10),
            "ssim": ssim(ceil_mel.values, y_mel.values),
        }
        if case == "env_to_clean":
            y_hat_wav = invert_mel(y_hat, n_iters=gl_iters)
            n = y_hat_wav.n_samples
            y_ref = AudioSegment(y_wav.samples[:n])
            row.sisnr = sisnr(y_hat_wav.samples, y_ref.samples)
            row.sispnr = sispnr(y_hat_wav, y_ref)
            ceiling["sisnr"] = sisnr(ceil_wav.samples, y_ref.samples)
            ceiling["sispnr"] = sispnr(ceil_wav, y_ref)
        rows.append(row)
        unproc_rows.append({"lsd": row.unproc_lsd, "ssim": row.unproc_ssim})
        ceiling_rows.append(ceiling)

    def dict_mean(dicts):
        keys = dicts[0].keys()
        return {k: float(np.mean([d[k] for d in dicts])) for k in keys}

    return EvalReport(
        test_case=case,
        lsd_domain="mel",
        rows=rows,
        baselines={
            "unprocessed": dict_mean(unproc_rows),
            "target_mel": dict_mean(ceiling_rows),
        },
    )


def embed_corpus(
    manifest: CorpusManifest,
    checkpoint,
    split: str = "test",
) -> tuple[np.ndarray, list[str], list[str]]:
    """Embeddings for every rendering in the split, deterministic order.

    Returns (N, C) values with parallel utterance and environment id lists.
    """
    model, stats, _ = model_from_checkpoint(checkpoint)
    entries = sorted(
        (e for e in manifest.entries if e.split == split),
        key=lambda e: (e.utterance_id, e.env_id),
    )
    if not entries:
        raise ValueError(f"no entries in split {split!r}")
    vecs, utts, envs = [], [], []
    for e in entries:
        mel = normalize(mel_spectrogram(load_audio(manifest.path(e))), stats)
        with torch.no_grad():
            z = model.embed(torch.from_numpy(mel.values.astype(np.float32))[None])
        vecs.append(z[0].numpy().astype(np.float64))
        utts.append(e.utterance_id)
        envs.append(e.env_id)
    return np.stack(vecs), utts, envs


def principal_components(values: np.ndarray, k: int = 2) -> np.ndarray:
    """First k principal-component scores, sign-fixed for determinism."""
    centered = values - values.mean(axis=0, keepdims=True)
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    scores = u[:, :k] * s[:k]
    for j in range(min(k, scores.shape[1])):
        lead = vt[j, np.argmax(np.abs(vt[j]))]
        if lead < 0:
            scores[:, j] = -scores[:, j]
    return scores


def export_embeddings(
    manifest: CorpusManifest,
    checkpoint,
    out_path,
    split: str = "test",
) -> Path:
    """Write one row per clip: ids, the full vector, and 2-D PC scores."""
    values, utts, envs = embed_corpus(manifest, checkpoint, split=split)
    pcs = principal_components(values, k=2)
    c = values.shape[1]
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    header = ["utterance_id", "env_id"] + [f"e{i}" for i in range(c)] + ["pc1", "pc2"]
    lines = ["\t".join(header)]
    for i in range(len(utts)):
        cells = [utts[i], envs[i]]
        cells += [f"{v:.8g}" for v in values[i]]
        cells += [f"{pcs[i, 0]:.8g}", f"{pcs[i, 1]:.8g}"]
        lines.append("\t".join(cells))
    out_path.write_text("\n".join(lines) + "\n")
    return out_path


def load_embedding_table(path) -> tuple[np.ndarray, list[str], list[str]]:
    """Read the exported table back to (values, utterances, envs)."""
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split("\t")
    dims = [h for h in header if h.startswith("e") and h[1:].isdigit()]
    utts, envs, vecs = [], [], []
    for ln in lines[1:]:
        cells = ln.split("\t")
        utts.append(cells[0])
        envs.append(cells[1])
        vecs.append([float(v) for v in cells[2 : 2 + len(dims)]])
    return np.array(vecs), utts, envs


def _cosine_matrix(values: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(values, axis=1, keepdims=True)
    unit = values / np.maximum(norms, 1e-12)
    return unit @ unit.T


def knn_env_accuracy(values: np.ndarray, envs: list[str], k: int = 5) -> float:
    """Leave-one-out k-NN environment classification by cosine similarity."""
    n = len(envs)
    if n <= k:
        raise ValueError(f"need more than k={k} clips, got {n}")
    sim = _cosine_matrix(values)
    np.fill_diagonal(sim, -np.inf)
    correct = 0
    for i in range(n):
        nb = np.argsort(-sim[i], kind="stable")[:k]
        votes = {}
        for j in nb:
            votes[envs[j]] = votes.get(envs[j], 0) + 1
        pred = max(sorted(votes), key=lambda e: votes[e])
        correct += pred == envs[i]
    return correct / n


def cosine_separation(values: np.ndarray, envs: list[str]) -> tuple[float, float]:
    """(mean intra-env, mean inter-env) pairwise cosine similarity."""
    sim = _cosine_matrix(values)
    labels = np.array(envs)
    same = labels[:, None] == labels[None, :]
    off_diag = ~np.eye(len(envs), dtype=bool)
    intra = float(sim[same & off_diag].mean())
    inter = float(sim[~same].mean())
    return intra, inter
