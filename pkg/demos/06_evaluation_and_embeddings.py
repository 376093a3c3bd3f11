"""
Evaluation reports and environment embeddings
=============================================

Evaluation draws held-out (content, reference, target) triplets for one of
three scenarios, runs the full transfer on each pair and compares the
output grid against the target. The same checkpoint also yields a vector
per clip from the environment encoder; nearby vectors should share an
environment once training has done its job.
"""

import tempfile
from pathlib import Path

from envdiff.metrics import (
    cosine_separation, evaluate_testcase, export_embeddings, knn_env_accuracy,
    load_embedding_table,
)
from envdiff.synthdata import default_environments, generate_corpus
from envdiff.training import TrainConfig, train_enhancer, train_joint

with tempfile.TemporaryDirectory() as d:
    root = Path(d)
    envs = default_environments(3, seed=0)
    manifest = generate_corpus("builtin", envs, root / "corpus", seed=7,
                               n_utterances=8, utt_seconds=1.0, n_speakers=2)
    cfg = TrainConfig(stage="enhancer", out_dir=root / "run", total_steps=40,
                      batch_size=4, seed=3, log_every=20)
    stage1 = train_enhancer(cfg, manifest)
    cfg = TrainConfig(stage="joint", out_dir=root / "run", total_steps=80,
                      batch_size=4, seed=4, log_every=20)
    stage2 = train_joint(cfg, manifest, enhancer_ckpt=stage1.checkpoint)

    # each row is one evaluated pair; the unprocessed columns hold the same
    # distances measured between the raw content clip and the target, which
    # is the bar a useful model has to clear
    report = evaluate_testcase(manifest, "env_to_clean", stage2.checkpoint,
                               n_pairs=3, seed=0, split="test", gl_iters=4)
    agg = report.aggregates()
    print("pairs:", len(report.rows))
    print("model lsd:", round(agg["lsd"], 3),
          "unprocessed lsd:", round(agg["unproc_lsd"], 3))
    print("improved fraction:", report.improvement_fraction())
    print("griffin-lim ceiling lsd:",
          round(report.baselines["target_mel"]["lsd"], 3))

    # embeddings export to a TSV with the vector and 2-D projection scores
    table = export_embeddings(manifest, stage2.checkpoint, root / "emb.tsv")
    values, utts, env_ids = load_embedding_table(table)
    print("table:", values.shape, "clips from", sorted(set(env_ids)))
    print("knn env accuracy:", round(knn_env_accuracy(values, env_ids, k=3), 3))
    intra, inter = cosine_separation(values, env_ids)
    print("cosine intra vs inter:", round(intra, 3), "vs", round(inter, 3))
