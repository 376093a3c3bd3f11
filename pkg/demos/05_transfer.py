"""
Recording-environment transfer
==============================
"""

import json
import tempfile
from pathlib import Path

from envdiff.synthdata import default_environments, generate_corpus
from envdiff.training import TrainConfig, train_enhancer, train_joint, transfer

# Transfer takes two WAV files. The first supplies the spoken content, the
# second exemplifies the target environment. The output is a mel grid plus
# a Griffin-Lim waveform rendered from it.
#
# The model below trains for only 80 steps, so the output grid is still
# close to noise; swap in a real checkpoint to hear the effect. The point
# here is the artifact contract, which stays the same at any scale.
with tempfile.TemporaryDirectory() as d:
    root = Path(d)
    envs = default_environments(3, seed=0)
    manifest = generate_corpus("builtin", envs, root / "corpus", seed=7,
                               n_utterances=6, utt_seconds=1.0, n_speakers=2)
    cfg = TrainConfig(stage="enhancer", out_dir=root / "run", total_steps=40,
                      batch_size=4, seed=3, log_every=20)
    stage1 = train_enhancer(cfg, manifest)
    cfg = TrainConfig(stage="joint", out_dir=root / "run", total_steps=80,
                      batch_size=4, seed=4, log_every=20)
    stage2 = train_joint(cfg, manifest, enhancer_ckpt=stage1.checkpoint)

    content = root / "corpus" / "warm_room" / "utt000.wav"
    reference = root / "corpus" / "bright_hall" / "utt001.wav"
    out = transfer(content, reference, stage2.checkpoint, root / "out",
                   seed=0, gl_iters=8)

    # one mel, one wav and one metadata record per request
    for kind, path in sorted(out.items()):
        print(kind, "->", Path(path).name)
    meta = json.loads(Path(out["meta"]).read_text())
    print("grid shape:", meta["shape"])
    print("sampling seed:", meta["seed"], "schedule T:", meta["schedule"]["T"])
