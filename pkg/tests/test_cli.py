"""Tests for the command-line interface."""

import json

import pytest

from envdiff.cli import main
from envdiff.synthdata import MANIFEST_NAME


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_corpus")
    rc = main(["synth-data", "--out", str(out), "--utts", "8",
               "--seconds", "1.0", "--seed", "7"])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def run_dir(corpus_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_run")
    rc = main(["train-enhancer", "--manifest", str(corpus_dir), "--out", str(out),
               "--steps", "5", "--batch-size", "2", "--seed", "3"])
    assert rc == 0
    rc = main(["train", "--manifest", str(corpus_dir), "--out", str(out),
               "--enhancer-ckpt", str(out / "enhancer.pt"),
               "--steps", "5", "--batch-size", "2", "--seed", "4"])
    assert rc == 0
    return out


class TestScheduleCheck:
    def test_default_schedule_passes(self, capsys):
        assert main(["schedule-check", "--T", "100",
                     "--beta-start", "1e-4", "--beta-end", "0.06"]) == 0
        out = capsys.readouterr().out
        assert "beta_tilde[1] = 0" in out
        assert "FAIL" not in out

    def test_invalid_schedule_fails(self, capsys):
        assert main(["schedule-check", "--T", "1"]) == 1
        assert "error:" in capsys.readouterr().err


class TestUsageErrors:
    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as e:
            main(["transfuse"])
        assert e.value.code == 2

    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as e:
            main(["schedule-check", "--bogus", "1"])
        assert e.value.code == 2


class TestSynthData:
    def test_deterministic_manifests(self, tmp_path):
        for sub in ("a", "b"):
            rc = main(["synth-data", "--out", str(tmp_path / sub), "--utts", "3",
                       "--seconds", "0.5", "--seed", "9"])
            assert rc == 0
        assert (tmp_path / "a" / MANIFEST_NAME).read_bytes() == \
               (tmp_path / "b" / MANIFEST_NAME).read_bytes()

    def test_snapshot_written_and_reusable(self, tmp_path):
        main(["synth-data", "--out", str(tmp_path / "a"), "--utts", "3",
              "--seconds", "0.5", "--seed", "9"])
        snap = tmp_path / "a" / "synth-data-config.json"
        data = json.loads(snap.read_text())
        assert data["subcommand"] == "synth-data"
        assert data["seed"] == 9
        rc = main(["synth-data", "--out", str(tmp_path / "b"), "--config", str(snap)])
        assert rc == 0
        assert (tmp_path / "a" / MANIFEST_NAME).read_bytes() == \
               (tmp_path / "b" / MANIFEST_NAME).read_bytes()

    def test_flags_override_config_file(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_utterances": 3, "seed": 5, "utt_seconds": 0.5}))
        rc = main(["synth-data", "--out", str(tmp_path / "c"),
                   "--config", str(cfg), "--seed", "9"])
        assert rc == 0
        snap = json.loads((tmp_path / "c" / "synth-data-config.json").read_text())
        assert snap["n_utterances"] == 3  # from file
        assert snap["seed"] == 9          # flag wins

    def test_unknown_config_key_fails(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"utterances": 3}))
        assert main(["synth-data", "--out", str(tmp_path / "c"),
                     "--config", str(cfg)]) == 1
        assert "unknown config keys" in capsys.readouterr().err


class TestTrainCommands:
    def test_joint_requires_enhancer_ckpt(self, corpus_dir, tmp_path, capsys):
        rc = main(["train", "--manifest", str(corpus_dir), "--out", str(tmp_path),
                   "--steps", "1", "--batch-size", "2"])
        assert rc == 1
        assert "enhancer checkpoint" in capsys.readouterr().err

    def test_joint_without_enhancer_flag(self, corpus_dir, tmp_path):
        rc = main(["train", "--manifest", str(corpus_dir), "--out", str(tmp_path),
                   "--steps", "2", "--batch-size", "2", "--no-enhancer"])
        assert rc == 0
        assert (tmp_path / "joint.pt").exists()

    def test_run_artifacts(self, run_dir):
        assert (run_dir / "enhancer.pt").exists()
        assert (run_dir / "joint.pt").exists()
        assert (run_dir / "enhancer_loss.tsv").read_text().startswith("step\tlr\tloss")
        assert json.loads((run_dir / "train-config.json").read_text())["seed"] == 4


class TestTransferCommand:
    def test_missing_input_is_io_error(self, tmp_path, capsys):
        rc = main(["transfer", "--content", "missing.wav", "--reference", "x.wav",
                   "--ckpt", "none.pt", "--out", str(tmp_path)])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_produces_outputs(self, corpus_dir, run_dir, tmp_path):
        x = corpus_dir / "warm_room" / "utt000.wav"
        r = corpus_dir / "clean" / "utt001.wav"
        rc = main(["transfer", "--content", str(x), "--reference", str(r),
                   "--ckpt", str(run_dir / "joint.pt"), "--out", str(tmp_path),
                   "--seed", "1", "--gl-iters", "2"])
        assert rc == 0
        names = {p.name for p in tmp_path.iterdir()}
        assert names == {"utt000__utt001.mel", "utt000__utt001.wav",
                         "utt000__utt001.json", "transfer-config.json"}


class TestEvaluateAndEmbed:
    def test_evaluate_writes_report(self, corpus_dir, run_dir, tmp_path, capsys):
        rc = main(["evaluate", "--manifest", str(corpus_dir),
                   "--ckpt", str(run_dir / "joint.pt"), "--out", str(tmp_path),
                   "--case", "env_to_env", "--pairs", "2", "--gl-iters", "2"])
        assert rc == 0
        report = (tmp_path / "report_env_to_env.tsv").read_text()
        assert report.startswith("# test_case: env_to_env")
        assert "improved pairs" in capsys.readouterr().out

    def test_embed_writes_table(self, corpus_dir, run_dir, tmp_path):
        rc = main(["embed", "--manifest", str(corpus_dir),
                   "--ckpt", str(run_dir / "joint.pt"), "--out", str(tmp_path)])
        assert rc == 0
        head = (tmp_path / "embeddings.tsv").read_text().splitlines()[0]
        assert head.split("\t")[:2] == ["utterance_id", "env_id"]

    def test_writes_stay_inside_out_dir(self, corpus_dir, run_dir, tmp_path, monkeypatch):
        workdir = tmp_path / "cwd"
        workdir.mkdir()
        monkeypatch.chdir(workdir)
        out = tmp_path / "out"
        rc = main(["embed", "--manifest", str(corpus_dir),
                   "--ckpt", str(run_dir / "joint.pt"), "--out", str(out)])
        assert rc == 0
        assert list(workdir.iterdir()) == []
