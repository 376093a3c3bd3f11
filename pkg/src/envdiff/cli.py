"""Command-line entry point wiring the library into batch workflows.

Every run resolves its settings from three layers (builtin defaults, then an
optional JSON config file, then explicit flags) and writes the resolved
values as a snapshot next to its outputs, so any run can be reproduced from
the snapshot alone via --config.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from envdiff import synthdata as sd
from envdiff.diffusion import build_schedule, schedule_report
from envdiff.metrics import EVAL_CASES, evaluate_testcase, export_embeddings, write_report
from envdiff.nets import ModelConfig
from envdiff.training import TrainConfig, train_enhancer, train_joint, transfer

_TRAIN_KEYS = (
    "total_steps", "batch_size", "lr_start", "lr_halving_interval_steps",
    "weight_decay", "grad_clip", "seed", "p_aug", "snr_range",
    "aug_cache_size", "crop_frames", "log_every", "ckpt_every",
    "schedule_T", "beta_start", "beta_end",
)
_MODEL_KEYS = (
    "decoder_kind", "encoder_kind", "use_enhancer", "enhancer_channels",
    "unet_channels", "wavenet_blocks", "wavenet_channels", "r2_channels",
    "attn_bottleneck", "attention_global_context", "step_embed_dim",
)


def _load_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise OSError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ValueError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    return data


# Path-valued snapshot entries; always supplied as flags, so a snapshot fed
# back through --config reproduces a run without clobbering its outputs.
_SNAPSHOT_ONLY = {"out_dir", "manifest", "checkpoint", "content", "reference",
                  "enhancer_ckpt"}


def _resolve(defaults: dict, args: argparse.Namespace, keys) -> dict:
    """Layer: defaults < config file < explicit flags."""
    resolved = dict(defaults)
    if getattr(args, "config", None):
        file_cfg = _load_config_file(args.config)
        file_cfg.pop("subcommand", None)
        for k in _SNAPSHOT_ONLY:
            file_cfg.pop(k, None)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(file_cfg)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            resolved[k] = v
    return resolved


def _snapshot(resolved: dict, subcommand: str, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"subcommand": subcommand}
    for k, v in resolved.items():
        payload[k] = str(v) if isinstance(v, Path) else v
    path = out_dir / f"{subcommand}-config.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _train_defaults(stage: str) -> dict:
    d = {k: None for k in _TRAIN_KEYS}
    d.update(
        total_steps=2000 if stage == "enhancer" else 20000,
        batch_size=8,
        lr_start=0.0008,
        lr_halving_interval_steps=2000 if stage == "enhancer" else 8000,
        weight_decay=0.01,
        grad_clip=1.0,
        seed=0,
        p_aug=0.5,
        snr_range=[0.0, 30.0],
        aug_cache_size=4,
        crop_frames=63,
        log_every=100,
        ckpt_every=1000,
        schedule_T=100,
        beta_start=1e-4,
        beta_end=0.06,
        model={},
    )
    return d


def _model_config(resolved: dict, args: argparse.Namespace) -> ModelConfig:
    model = dict(resolved.get("model") or {})
    unknown = set(model) - set(_MODEL_KEYS)
    if unknown:
        raise ValueError(f"unknown model config keys: {sorted(unknown)}")
    for k in ("decoder_kind", "encoder_kind", "use_enhancer"):
        v = getattr(args, k, None)
        if v is not None:
            model[k] = v
    resolved["model"] = model
    return ModelConfig.from_dict(model)


def _build_train_config(stage: str, args: argparse.Namespace) -> tuple[TrainConfig, dict]:
    resolved = _resolve(_train_defaults(stage), args, _TRAIN_KEYS)
    model = _model_config(resolved, args)
    kwargs = {k: resolved[k] for k in _TRAIN_KEYS}
    kwargs["snr_range"] = tuple(kwargs["snr_range"])
    cfg = TrainConfig(stage=stage, out_dir=Path(args.out), model=model, **kwargs)
    resolved.update(manifest=str(args.manifest), out_dir=str(args.out))
    return cfg, resolved


def _cmd_synth_data(args) -> int:
    defaults = dict(source="builtin", n_envs=3, n_utterances=50, utt_seconds=4.0,
                    n_speakers=5, test_fraction=0.2, seed=7)
    resolved = _resolve(defaults, args, tuple(defaults))
    envs = sd.default_environments(resolved["n_envs"])
    manifest = sd.generate_corpus(
        resolved["source"], envs, args.out,
        seed=resolved["seed"],
        n_utterances=resolved["n_utterances"],
        utt_seconds=resolved["utt_seconds"],
        n_speakers=resolved["n_speakers"],
        test_fraction=resolved["test_fraction"],
    )
    resolved["out_dir"] = str(args.out)
    _snapshot(resolved, "synth-data", args.out)
    print(f"wrote {len(manifest.entries)} renderings "
          f"({len(manifest.utterances())} utterances x {len(manifest.env_ids)} envs) "
          f"to {args.out}")
    return 0


def _cmd_train_enhancer(args) -> int:
    cfg, resolved = _build_train_config("enhancer", args)
    manifest = sd.load_manifest(args.manifest)
    result = train_enhancer(cfg, manifest)
    _snapshot(resolved, "train-enhancer", args.out)
    print(f"checkpoint: {result.checkpoint}")
    print(f"loss log: {result.log_path}")
    print(f"final loss: {result.rows[-1][2]:.6g}")
    return 0


def _cmd_train(args) -> int:
    cfg, resolved = _build_train_config("joint", args)
    resolved["enhancer_ckpt"] = str(args.enhancer_ckpt) if args.enhancer_ckpt else None
    manifest = sd.load_manifest(args.manifest)
    result = train_joint(cfg, manifest, args.enhancer_ckpt)
    _snapshot(resolved, "train", args.out)
    print(f"checkpoint: {result.checkpoint}")
    print(f"loss log: {result.log_path}")
    print(f"final loss: {result.rows[-1][2]:.6g}")
    return 0


def _cmd_transfer(args) -> int:
    defaults = dict(seed=0, target_seconds=None, gl_iters=32)
    resolved = _resolve(defaults, args, tuple(defaults))
    paths = transfer(
        args.content, args.reference, args.ckpt, args.out,
        seed=resolved["seed"],
        target_seconds=resolved["target_seconds"],
        gl_iters=resolved["gl_iters"],
    )
    resolved.update(content=str(args.content), reference=str(args.reference),
                    checkpoint=str(args.ckpt), out_dir=str(args.out))
    _snapshot(resolved, "transfer", args.out)
    for k in ("mel", "wav", "meta"):
        print(f"{k}: {paths[k]}")
    return 0


def _cmd_evaluate(args) -> int:
    defaults = dict(case="env_to_clean", n_pairs=50, seed=0, split="test", gl_iters=32)
    resolved = _resolve(defaults, args, tuple(defaults))
    manifest = sd.load_manifest(args.manifest)
    report = evaluate_testcase(
        manifest, resolved["case"], args.ckpt,
        n_pairs=resolved["n_pairs"], seed=resolved["seed"],
        split=resolved["split"], gl_iters=resolved["gl_iters"],
    )
    out = Path(args.out)
    path = write_report(report, out / f"report_{resolved['case']}.tsv")
    resolved.update(manifest=str(args.manifest), checkpoint=str(args.ckpt),
                    out_dir=str(args.out))
    _snapshot(resolved, "evaluate", args.out)
    agg = report.aggregates()
    unproc = report.baselines["unprocessed"]
    print(f"report: {path}")
    print(f"model lsd {agg['lsd']:.4g} ssim {agg['ssim']:.4g} | "
          f"unprocessed lsd {unproc['lsd']:.4g} ssim {unproc['ssim']:.4g} | "
          f"improved pairs {report.improvement_fraction():.0%}")
    return 0


def _cmd_embed(args) -> int:
    defaults = dict(split="test")
    resolved = _resolve(defaults, args, tuple(defaults))
    manifest = sd.load_manifest(args.manifest)
    out = Path(args.out)
    path = export_embeddings(manifest, args.ckpt, out / "embeddings.tsv",
                             split=resolved["split"])
    resolved.update(manifest=str(args.manifest), checkpoint=str(args.ckpt),
                    out_dir=str(args.out))
    _snapshot(resolved, "embed", args.out)
    print(f"embeddings: {path}")
    return 0


def _cmd_schedule_check(args) -> int:
    defaults = dict(T=100, beta_start=1e-4, beta_end=0.06)
    resolved = _resolve(defaults, args, tuple(defaults))
    sched = build_schedule(resolved["T"], resolved["beta_start"], resolved["beta_end"])
    report = schedule_report(sched)
    for name, ok in sorted(report["checks"].items()):
        print(f"{'ok  ' if ok else 'FAIL'} {name}")
    print(f"beta_tilde[1] = {sched.posterior_var[0]:g}")
    print(f"terminal alpha_bar = {sched.alpha_bar[-1]:.6g}")
    if report["violations"]:
        print(f"violations: {', '.join(report['violations'])}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="envdiff",
        description="Recording-environment transfer: data synthesis, training, "
                    "inference, evaluation.",
    )
    sub = p.add_subparsers(dest="subcommand", required=True)

    def add_config(sp):
        sp.add_argument("--config", help="JSON config file; flags override its values")

    sp = sub.add_parser("synth-data", help="render a synthetic paired corpus")
    sp.add_argument("--out", required=True, help="corpus output directory")
    sp.add_argument("--source", help="'builtin' surrogates or a directory of WAV files")
    sp.add_argument("--envs", dest="n_envs", type=int)
    sp.add_argument("--utts", dest="n_utterances", type=int)
    sp.add_argument("--seconds", dest="utt_seconds", type=float)
    sp.add_argument("--speakers", dest="n_speakers", type=int)
    sp.add_argument("--test-fraction", dest="test_fraction", type=float)
    sp.add_argument("--seed", type=int)
    add_config(sp)
    sp.set_defaults(func=_cmd_synth_data)

    def add_train_flags(sp):
        sp.add_argument("--manifest", required=True, help="corpus directory")
        sp.add_argument("--out", required=True, help="run output directory")
        sp.add_argument("--steps", dest="total_steps", type=int)
        sp.add_argument("--batch-size", dest="batch_size", type=int)
        sp.add_argument("--lr-start", dest="lr_start", type=float)
        sp.add_argument("--halve-every", dest="lr_halving_interval_steps", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--p-aug", dest="p_aug", type=float)
        sp.add_argument("--crop-frames", dest="crop_frames", type=int)
        sp.add_argument("--aug-cache", dest="aug_cache_size", type=int)
        sp.add_argument("--log-every", dest="log_every", type=int)
        sp.add_argument("--ckpt-every", dest="ckpt_every", type=int)
        sp.add_argument("--T", dest="schedule_T", type=int)
        sp.add_argument("--beta-start", dest="beta_start", type=float)
        sp.add_argument("--beta-end", dest="beta_end", type=float)
        sp.add_argument("--decoder", dest="decoder_kind", choices=["wavenet", "unet"])
        sp.add_argument("--encoder", dest="encoder_kind", choices=["r1", "r2"])
        sp.add_argument("--no-enhancer", dest="use_enhancer",
                        action="store_const", const=False)
        add_config(sp)

    sp = sub.add_parser("train-enhancer", help="stage one: fit the content enhancer")
    add_train_flags(sp)
    sp.set_defaults(func=_cmd_train_enhancer)

    sp = sub.add_parser("train", help="stage two: joint encoder+decoder training")
    add_train_flags(sp)
    sp.add_argument("--enhancer-ckpt", dest="enhancer_ckpt",
                    help="stage-one checkpoint (omit with --no-enhancer)")
    sp.set_defaults(func=_cmd_train)

    sp = sub.add_parser("transfer", help="run inference on one (content, reference) pair")
    sp.add_argument("--content", required=True)
    sp.add_argument("--reference", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--seconds", dest="target_seconds", type=float)
    sp.add_argument("--gl-iters", dest="gl_iters", type=int)
    add_config(sp)
    sp.set_defaults(func=_cmd_transfer)

    sp = sub.add_parser("evaluate", help="score a checkpoint on one test case")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--case", choices=list(EVAL_CASES))
    sp.add_argument("--pairs", dest="n_pairs", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--split")
    sp.add_argument("--gl-iters", dest="gl_iters", type=int)
    add_config(sp)
    sp.set_defaults(func=_cmd_evaluate)

    sp = sub.add_parser("embed", help="export environment embeddings to TSV")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--split")
    add_config(sp)
    sp.set_defaults(func=_cmd_embed)

    sp = sub.add_parser("schedule-check", help="verify noise-schedule invariants")
    sp.add_argument("--T", dest="T", type=int)
    sp.add_argument("--beta-start", dest="beta_start", type=float)
    sp.add_argument("--beta-end", dest="beta_end", type=float)
    add_config(sp)
    sp.set_defaults(func=_cmd_schedule_check)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
