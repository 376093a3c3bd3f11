"""Two-stage training orchestration and the transfer inference path.

Stage one fits the content enhancer alone with an L1 objective. Stage two
freezes it and jointly fits the environment encoder and diffusion decoder
with the noise-prediction objective. Both stages share one checkpoint
format, one normalization, and one seeded data path, so a saved run can be
resumed into inference bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from envdiff import diffusion
from envdiff.audio import (
    AudioSegment,
    MelSpectrogram,
    NormStats,
    compute_norm_stats,
    load_audio,
    mel_spectrogram,
    normalize,
    save_audio,
    save_mel,
    segment,
    invert_mel,
    denormalize,
)
from envdiff.diffusion import NoiseSchedule, build_schedule
from envdiff.nets import (
    EnvTransferModel,
    ModelConfig,
    load_checkpoint,
    model_from_checkpoint,
    param_fingerprint,
    save_checkpoint,
)
from envdiff.synthdata import (
    CorpusManifest,
    default_ir_pool,
    default_noise_pool,
    augment_content,
    draw_triplet,
)

STAGES = ("enhancer", "joint")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization and data-path settings for one training stage."""

    stage: str
    out_dir: Path
    total_steps: int
    batch_size: int = 32
    lr_start: float = 0.0008
    lr_halving_interval_steps: int = 20000
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    seed: int = 0
    p_aug: float = 0.5
    snr_range: tuple[float, float] = (0.0, 30.0)
    # Pre-rendered augmentation variants kept per utterance; 0 renders fresh
    # audio for every augmented draw.
    aug_cache_size: int = 4
    crop_frames: int = 63
    log_every: int = 100
    ckpt_every: int = 1000
    schedule_T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.06
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_start <= 0:
            raise ValueError("lr_start must be positive")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.lr_halving_interval_steps < 1:
            raise ValueError("lr_halving_interval_steps must be >= 1")
        if not 0.0 <= self.p_aug <= 1.0:
            raise ValueError("p_aug must lie in [0, 1]")
        if self.crop_frames < 16:
            raise ValueError("crop_frames must cover the encoder minimum (16)")
        if self.aug_cache_size < 0:
            raise ValueError("aug_cache_size must be >= 0")
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        object.__setattr__(
            self, "snr_range", (float(self.snr_range[0]), float(self.snr_range[1]))
        )


def lr_at(lr_start: float, halving_interval: int, step: int) -> float:
    """Stepwise-halved learning rate, exact at every step."""
    return lr_start * 0.5 ** (step // halving_interval)


def step_rng(seed: int, step: int) -> np.random.Generator:
    """Per-step generator; serial order is reproducible draw by draw."""
    return np.random.default_rng(np.random.SeedSequence([seed, step]))


@dataclass
class TrainResult:
    checkpoint: Path
    log_path: Path
    rows: list  # (step, lr, loss) as logged
    model: EnvTransferModel
    stats: NormStats
    schedule: NoiseSchedule


class MelStore:
    """Normalized mel grids for a corpus, with augmentation and enhancement
    caches so full-length audio work happens once per clip."""

    def __init__(
        self,
        manifest: CorpusManifest,
        stats: Optional[NormStats] = None,
        split: str = "train",
        seed: int = 0,
        aug_cache_size: int = 4,
        snr_range: tuple[float, float] = (0.0, 30.0),
    ):
        self.manifest = manifest
        self.split = split
        self.seed = seed
        self.aug_cache_size = aug_cache_size
        self.snr_range = snr_range
        self._mels: dict[tuple[str, str], np.ndarray] = {}
        self._enhanced: dict[tuple[str, str], np.ndarray] = {}
        self._clean_wavs: dict[str, AudioSegment] = {}
        self._utt_index = {u: i for i, u in enumerate(sorted(manifest.utterances()))}
        pool_rng = np.random.default_rng(np.random.SeedSequence([seed, 77]))
        self._aug_pools = (
            default_ir_pool(pool_rng, k=4),
            default_noise_pool(pool_rng, kinds=("white", "pink")),
        )
        self.stats = stats if stats is not None else self._compute_stats()

    def _compute_stats(self) -> NormStats:
        mels = []
        for e in sorted(self.manifest.entries, key=lambda e: (e.utterance_id, e.env_id)):
            if e.split == self.split:
                mels.append(mel_spectrogram(load_audio(self.manifest.path(e))))
        if not mels:
            raise ValueError(f"no entries in split {self.split!r}")
        return compute_norm_stats(mels)

    def _clean_wav(self, utt: str) -> AudioSegment:
        if utt not in self._clean_wavs:
            entry = self.manifest.entry(utt, "clean")
            self._clean_wavs[utt] = load_audio(self.manifest.path(entry))
        return self._clean_wavs[utt]

    def mel(self, utt: str, env_key: str) -> np.ndarray:
        """Normalized (80, T) grid; env_key is an env_id or 'aug<k>'."""
        key = (utt, env_key)
        if key not in self._mels:
            if env_key.startswith("aug"):
                k = int(env_key[3:])
                wav = augment_content(
                    self._clean_wav(utt),
                    self._aug_pools[0],
                    self._aug_pools[1],
                    self.snr_range,
                    np.random.SeedSequence([self.seed, self._utt_index[utt], k]),
                )
            else:
                wav = load_audio(self.manifest.path(self.manifest.entry(utt, env_key)))
            m = normalize(mel_spectrogram(wav), self.stats)
            self._mels[key] = m.values.astype(np.float32)
        return self._mels[key]

    def enhanced(self, utt: str, env_key: str, model: EnvTransferModel) -> np.ndarray:
        """Full-length enhanced content grid, cached; raw grid when the model
        carries no enhancer."""
        if model.enhancer is None:
            return self.mel(utt, env_key)
        key = (utt, env_key)
        if key not in self._enhanced:
            x = torch.from_numpy(self.mel(utt, env_key))[None]
            with torch.no_grad():
                self._enhanced[key] = model.enhance(x)[0].numpy()
        return self._enhanced[key]

    def invalidate_enhanced(self) -> None:
        self._enhanced.clear()

    def aug_key(self, rng: np.random.Generator) -> str:
        if self.aug_cache_size == 0:
            # a fresh variant index far outside the cached range
            return f"aug{1000 + int(rng.integers(0, 2**31))}"
        return f"aug{int(rng.integers(0, self.aug_cache_size))}"


def _crop(grid: np.ndarray, frames: int, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    t = grid.shape[1]
    if t < frames:
        raise ValueError(f"clip has {t} frames, need {frames}; use longer utterances")
    off = int(rng.integers(0, t - frames + 1))
    return grid[:, off : off + frames], off


def enhancer_batch(
    store: MelStore,
    rng: np.random.Generator,
    batch_size: int,
    crop_frames: int,
    p_aug: float,
) -> tuple[torch.Tensor, torch.Tensor]:
    """(degraded content, clean target) pairs, cropped in lockstep."""
    xs, ys = [], []
    for _ in range(batch_size):
        draw = draw_triplet(store.manifest, "train", rng, p_aug=p_aug, split=store.split)
        env_key = store.aug_key(rng) if draw.augmented else draw.content.env_id
        x = store.mel(draw.utterance_id, env_key)
        y = store.mel(draw.utterance_id, "clean")
        x_c, off = _crop(x, crop_frames, rng)
        xs.append(x_c)
        ys.append(y[:, off : off + crop_frames])
    return torch.from_numpy(np.stack(xs)), torch.from_numpy(np.stack(ys))


def joint_batch(
    store: MelStore,
    model: EnvTransferModel,
    rng: np.random.Generator,
    batch_size: int,
    crop_frames: int,
    p_aug: float,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(target Y0, enhanced content X_c, reference R) crops for one step."""
    y0s, xcs, rs = [], [], []
    for _ in range(batch_size):
        draw = draw_triplet(store.manifest, "train", rng, p_aug=p_aug, split=store.split)
        env_key = store.aug_key(rng) if draw.augmented else draw.content.env_id
        x_full = store.enhanced(draw.utterance_id, env_key, model)
        y_full = store.mel(draw.utterance_id, draw.target.env_id)
        y0, off = _crop(y_full, crop_frames, rng)
        xcs.append(x_full[:, off : off + crop_frames])
        y0s.append(y0)
        r_full = store.mel(draw.reference.utterance_id, draw.reference.env_id)
        rs.append(_crop(r_full, crop_frames, rng)[0])
    return (
        torch.from_numpy(np.stack(y0s)),
        torch.from_numpy(np.stack(xcs)),
        torch.from_numpy(np.stack(rs)),
    )


def joint_loss(
    model: EnvTransferModel,
    sched: NoiseSchedule,
    y0: torch.Tensor,
    x_c: torch.Tensor,
    r: torch.Tensor,
    t_vec: np.ndarray,
    eps: torch.Tensor,
) -> torch.Tensor:
    """Noise-prediction objective with injectable (t, eps) draws."""
    t = torch.as_tensor(np.asarray(t_vec), dtype=torch.long)
    ab = torch.from_numpy(sched.alpha_bar.astype(np.float32))[t - 1]
    y_t = ab.sqrt()[:, None, None] * y0 + (1.0 - ab).sqrt()[:, None, None] * eps
    z_r = model.embed(r)
    eps_hat = model.predict_eps(y_t, t, x_c, z_r)
    return ((eps - eps_hat) ** 2).mean()


def stage_parameters(model: EnvTransferModel, stage: str) -> list[torch.nn.Parameter]:
    """Parameters optimized by a stage; the joint stage freezes the enhancer."""
    if stage == "enhancer":
        if model.enhancer is None:
            raise ValueError("model has no enhancer")
        return list(model.enhancer.parameters())
    if stage != "joint":
        raise ValueError(f"unknown stage {stage!r}")
    trained = [model.encoder, model.decoder] + (
        [model.cond_proj] if model.cond_proj is not None else []
    )
    if model.enhancer is not None:
        model.enhancer.requires_grad_(False)
        model.enhancer.eval()
    return [p for m in trained for p in m.parameters()]


class _LossLog:
    def __init__(self, path: Path):
        self.path = path
        self.rows: list[tuple[int, float, float]] = []
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("step\tlr\tloss\n")

    def add(self, step: int, lr: float, loss: float) -> None:
        self.rows.append((step, lr, loss))
        with self.path.open("a") as f:
            f.write(f"{step}\t{lr:.8g}\t{loss:.8g}\n")


def _run_stage(cfg: TrainConfig, store: MelStore, model: EnvTransferModel) -> TrainResult:
    torch.manual_seed(cfg.seed)
    sched = build_schedule(cfg.schedule_T, cfg.beta_start, cfg.beta_end)
    params = stage_parameters(model, cfg.stage)
    opt = torch.optim.AdamW(params, lr=cfg.lr_start, weight_decay=cfg.weight_decay)

    ckpt_path = cfg.out_dir / f"{cfg.stage}.pt"
    log = _LossLog(cfg.out_dir / f"{cfg.stage}_loss.tsv")
    window: list[float] = []
    for step in range(cfg.total_steps):
        rng = step_rng(cfg.seed, step)
        lr = lr_at(cfg.lr_start, cfg.lr_halving_interval_steps, step)
        for g in opt.param_groups:
            g["lr"] = lr
        if cfg.stage == "enhancer":
            x, y = enhancer_batch(store, rng, cfg.batch_size, cfg.crop_frames, cfg.p_aug)
            loss = (model.enhance(x) - y).abs().mean()
        else:
            y0, x_c, r = joint_batch(store, model, rng, cfg.batch_size, cfg.crop_frames, cfg.p_aug)
            t_vec = rng.integers(1, sched.T + 1, size=cfg.batch_size)
            eps = torch.from_numpy(
                rng.standard_normal(tuple(y0.shape)).astype(np.float32)
            )
            loss = joint_loss(model, sched, y0, x_c, r, t_vec, eps)
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
        opt.step()

        val = float(loss.detach())
        window.append(val)
        if step == 0:
            log.add(0, lr, val)
        elif (step + 1) % cfg.log_every == 0:
            log.add(step + 1, lr, float(np.mean(window)))
            window.clear()
        if (step + 1) % cfg.ckpt_every == 0:
            save_checkpoint(ckpt_path, model, store.stats, sched,
                            extra={"stage": cfg.stage, "step": step + 1})

    save_checkpoint(
        ckpt_path, model, store.stats, sched,
        extra={"stage": cfg.stage, "step": cfg.total_steps, "final_loss": log.rows[-1][2]},
    )
    return TrainResult(ckpt_path, log.path, log.rows, model, store.stats, sched)


def train_enhancer(cfg: TrainConfig, manifest: CorpusManifest) -> TrainResult:
    """Stage one: L1 fit of the enhancer on (degraded, clean) pairs."""
    if cfg.stage != "enhancer":
        raise ValueError("config stage must be 'enhancer'")
    if not cfg.model.use_enhancer:
        raise ValueError("enhancer stage needs use_enhancer=true")
    store = MelStore(manifest, split="train", seed=cfg.seed,
                     aug_cache_size=cfg.aug_cache_size, snr_range=cfg.snr_range)
    torch.manual_seed(cfg.seed)  # init must not depend on ambient rng state
    model = EnvTransferModel(cfg.model)
    return _run_stage(cfg, store, model)


def train_joint(
    cfg: TrainConfig,
    manifest: CorpusManifest,
    enhancer_ckpt: Optional[Path] = None,
) -> TrainResult:
    """Stage two: joint encoder+decoder fit with the enhancer frozen."""
    if cfg.stage != "joint":
        raise ValueError("config stage must be 'joint'")
    torch.manual_seed(cfg.seed)  # init must not depend on ambient rng state
    stats = None
    if cfg.model.use_enhancer:
        if enhancer_ckpt is None:
            raise ValueError("joint stage needs an enhancer checkpoint "
                             "(or a config with use_enhancer=false)")
        payload = load_checkpoint(enhancer_ckpt)
        if payload["extra"].get("stage") != "enhancer":
            raise ValueError(f"{enhancer_ckpt} is not an enhancer-stage checkpoint")
        if ModelConfig.from_dict(payload["config"]) != cfg.model:
            raise ValueError("enhancer checkpoint was trained under a different "
                             "model config")
        model = EnvTransferModel(cfg.model)
        model.load_state_dict(payload["state"])
        stats = NormStats(**payload["norm_stats"])
    else:
        if enhancer_ckpt is not None:
            raise ValueError("use_enhancer=false but an enhancer checkpoint was given")
        model = EnvTransferModel(cfg.model)
    store = MelStore(manifest, stats=stats, split="train", seed=cfg.seed,
                     aug_cache_size=cfg.aug_cache_size, snr_range=cfg.snr_range)
    before = param_fingerprint(model.enhancer) if model.enhancer is not None else None
    result = _run_stage(cfg, store, model)
    if before is not None and param_fingerprint(model.enhancer) != before:
        raise RuntimeError("enhancer parameters moved during the joint stage")
    return result


def transfer_arrays(
    model: EnvTransferModel,
    sched: NoiseSchedule,
    x_norm: np.ndarray,
    r_norm: np.ndarray,
    seed: int = 0,
) -> np.ndarray:
    """Run the full reverse process on normalized grids; returns (80, T)."""
    model.eval()
    x = torch.from_numpy(np.asarray(x_norm, dtype=np.float32))[None]
    r = torch.from_numpy(np.asarray(r_norm, dtype=np.float32))[None]
    with torch.no_grad():
        x_c = model.enhance(x)
        z_r = model.embed(r)

    def denoiser(y, t, _xc, _zr):
        y_t = torch.from_numpy(np.asarray(y, dtype=np.float32))[None]
        with torch.no_grad():
            out = model.predict_eps(y_t, torch.tensor([t]), x_c, z_r)
        return out[0].numpy().astype(np.float64)

    rng = np.random.default_rng(seed)
    y0 = diffusion.sample(denoiser, x_c, z_r, tuple(x_norm.shape), sched, rng)
    return np.clip(y0, -1.0, 1.0)


def transfer(
    x_path,
    r_path,
    checkpoint,
    out_dir,
    seed: int = 0,
    target_seconds: Optional[float] = None,
    gl_iters: int = 32,
) -> dict:
    """File-level transfer: content clip + reference clip -> mel + waveform.

    Returns a dict with the mel, waveform, and metadata paths.
    """
    model, stats, sched = model_from_checkpoint(checkpoint)
    x_wav = load_audio(x_path)
    r_wav = load_audio(r_path)
    if target_seconds is not None:
        x_wav = segment(x_wav, target_seconds, mode="pad")
        r_wav = segment(r_wav, target_seconds, mode="pad")
    x_mel = normalize(mel_spectrogram(x_wav), stats)
    r_mel = normalize(mel_spectrogram(r_wav), stats)
    y_norm = transfer_arrays(model, sched, x_mel.values, r_mel.values, seed=seed)
    y_mel = denormalize(
        MelSpectrogram(y_norm, normalized=True, norm_stats=stats), stats
    )

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{Path(x_path).stem}__{Path(r_path).stem}"
    paths = {
        "mel": out_dir / f"{stem}.mel",
        "wav": out_dir / f"{stem}.wav",
        "meta": out_dir / f"{stem}.json",
    }
    save_mel(y_mel, paths["mel"])
    save_audio(invert_mel(y_mel, n_iters=gl_iters), paths["wav"])
    meta = {
        "content": str(x_path),
        "reference": str(r_path),
        "checkpoint": str(checkpoint),
        "seed": seed,
        "shape": list(y_mel.values.shape),
        "schedule": {"T": sched.T, "beta_start": sched.beta_start, "beta_end": sched.beta_end},
        "use_enhancer": model.config.use_enhancer,
        "decoder_kind": model.config.decoder_kind,
        "encoder_kind": model.config.encoder_kind,
    }
    paths["meta"].write_text(json.dumps(meta, indent=2) + "\n")
    return {k: str(v) for k, v in paths.items()}
