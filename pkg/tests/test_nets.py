"""Tests for the neural components and checkpoint format."""

import numpy as np
import pytest
import torch

from envdiff.audio import NormStats
from envdiff.diffusion import build_schedule
from envdiff.nets import (
    EnvironmentEmbedding,
    EnvTransferModel,
    ModelConfig,
    R1Encoder,
    R2Encoder,
    ResUNetEnhancer,
    build_condition,
    build_model,
    load_checkpoint,
    model_from_checkpoint,
    param_fingerprint,
    save_checkpoint,
)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


class TestConfig:
    def test_cond_dim_follows_decoder(self):
        assert ModelConfig(decoder_kind="wavenet").cond_dim == 256
        assert ModelConfig(decoder_kind="unet").cond_dim == 80

    def test_dict_roundtrip(self):
        cfg = ModelConfig(decoder_kind="wavenet", encoder_kind="r1",
                          enhancer_channels=(4, 8, 16))
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_invalid_configs(self):
        with pytest.raises(ValueError):
            ModelConfig(decoder_kind="gru")
        with pytest.raises(ValueError):
            ModelConfig(encoder_kind="r3")
        with pytest.raises(ValueError):
            ModelConfig(r2_channels=66)
        with pytest.raises(ValueError):
            ModelConfig(step_embed_dim=3)
        with pytest.raises(ValueError):
            ModelConfig.from_dict({"decoder_kind": "unet", "depth": 4})

    def test_embedding_type_validation(self):
        e = EnvironmentEmbedding(np.zeros(80), "clean")
        assert e.dim == 80
        with pytest.raises(ValueError):
            EnvironmentEmbedding(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            EnvironmentEmbedding(np.array([1.0, np.nan]))


class TestEnhancer:
    def test_shape_preserved(self):
        enh = ResUNetEnhancer()
        for t in (63, 251):
            assert enh(torch.randn(2, 80, t)).shape == (2, 80, t)

    def test_untrained_is_identity(self):
        enh = ResUNetEnhancer()
        x = torch.randn(2, 80, 63)
        with torch.no_grad():
            assert torch.equal(enh(x), x)

    def test_wrong_band_count_rejected(self):
        with pytest.raises(ValueError):
            ResUNetEnhancer()(torch.randn(1, 64, 63))


class TestEncoders:
    def test_fixed_width_across_lengths(self):
        for cls in (R1Encoder, R2Encoder):
            enc = cls(80).eval()
            with torch.no_grad():
                assert enc(torch.randn(1, 80, 100)).shape == (1, 80)
                assert enc(torch.randn(1, 80, 251)).shape == (1, 80)

    def test_inference_deterministic(self):
        enc = R2Encoder(80).eval()
        r = torch.randn(1, 80, 100)
        with torch.no_grad():
            assert torch.equal(enc(r), enc(r))

    def test_r1_exactly_permutation_invariant(self):
        enc = R1Encoder(80).eval()
        r = torch.randn(1, 80, 100)
        perm = torch.randperm(100)
        with torch.no_grad():
            a, b = enc(r), enc(r[:, :, perm])
        # kernel-1 trunk + permutation-invariant pooling: equal up to
        # reduction-order float error (measured 1.2e-7 relative)
        assert (a - b).norm() / a.norm() < 1e-5

    def test_r1_and_r2_differ_untrained(self):
        r = torch.randn(1, 80, 100)
        with torch.no_grad():
            a = R1Encoder(80).eval()(r)
            b = R2Encoder(80).eval()(r)
        assert not torch.allclose(a, b)

    def test_short_reference_rejected(self):
        for cls in (R1Encoder, R2Encoder):
            with pytest.raises(ValueError):
                cls(80)(torch.randn(1, 80, 8))


class TestCondition:
    def test_unet_stacks_embedding_rows(self):
        x_c = torch.randn(2, 80, 251)
        z_r = torch.randn(2, 80)
        cond = build_condition(x_c, z_r, "unet")
        assert cond.shape == (2, 160, 251)
        assert torch.equal(cond[:, :80], x_c)
        assert torch.equal(cond[:, 80:], z_r[:, :, None].expand(-1, -1, 251))

    def test_wavenet_zero_embedding_leaves_projection(self):
        proj = torch.nn.Linear(80, 256)
        x_c = torch.randn(2, 80, 63)
        cond = build_condition(x_c, torch.zeros(2, 256), "wavenet", proj)
        assert cond.shape == (2, 256, 63)
        assert torch.allclose(cond, proj(x_c.transpose(1, 2)).transpose(1, 2))

    def test_width_mismatch_rejected(self):
        x_c = torch.randn(1, 80, 63)
        with pytest.raises(ValueError):
            build_condition(x_c, torch.zeros(1, 256), "unet")
        with pytest.raises(ValueError):
            build_condition(x_c, torch.zeros(1, 80), "wavenet", torch.nn.Linear(80, 256))
        with pytest.raises(ValueError):
            build_condition(x_c, torch.zeros(1, 256), "wavenet")


class TestDecoders:
    @pytest.mark.parametrize("kind", ["unet", "wavenet"])
    def test_output_shape_and_zero_init(self, kind):
        m = build_model(ModelConfig(decoder_kind=kind))
        y = torch.randn(2, 80, 63)
        z = m.embed(torch.randn(2, 80, 63))
        with torch.no_grad():
            eps = m.predict_eps(y, torch.ones(2, dtype=torch.long), torch.randn(2, 80, 63), z)
        assert eps.shape == y.shape
        assert torch.equal(eps, torch.zeros_like(eps))

    @pytest.mark.parametrize("kind", ["unet", "wavenet"])
    def test_gradients_reach_encoder_after_one_step(self, kind):
        m = build_model(ModelConfig(decoder_kind=kind))
        opt = torch.optim.AdamW(m.parameters(), lr=1e-3)
        y = torch.randn(3, 80, 63)
        x_c = torch.randn(3, 80, 63)
        r = torch.randn(3, 80, 63)
        eps = torch.randn_like(y)
        t = torch.randint(1, 101, (3,))
        grads = []
        for _ in range(2):
            opt.zero_grad()
            loss = ((eps - m.predict_eps(y, t, x_c, m.embed(r))) ** 2).mean()
            loss.backward()
            grads.append(sum(float(p.grad.abs().sum())
                             for p in m.encoder.parameters() if p.grad is not None))
            opt.step()
        assert grads[0] == 0.0  # zero output head gates everything upstream
        assert grads[1] > 0.0

    @pytest.mark.parametrize("kind", ["unet", "wavenet"])
    def test_step_conditioning_changes_output(self, kind):
        m = build_model(ModelConfig(decoder_kind=kind))
        with torch.no_grad():  # nudge the head off zero so steps can matter
            head = m.decoder.head[-1] if kind == "wavenet" else m.decoder.head
            for p in head.parameters():
                p.add_(torch.randn_like(p) * 0.01)
        m.eval()
        y = torch.randn(1, 80, 63)
        z = m.embed(torch.randn(1, 80, 63))
        x_c = torch.randn(1, 80, 63)
        with torch.no_grad():
            o1 = m.predict_eps(y, torch.tensor([1]), x_c, z)
            oT = m.predict_eps(y, torch.tensor([100]), x_c, z)
        assert not torch.allclose(o1, oT)

    def test_condition_shape_mismatch_rejected(self):
        m = build_model(ModelConfig(decoder_kind="unet"))
        y = torch.randn(1, 80, 63)
        with pytest.raises(ValueError):
            m.decoder(y, torch.tensor([1]), torch.randn(1, 160, 31))


class TestCheckpoint:
    def test_roundtrip_bit_identical(self, tmp_path):
        m = build_model(ModelConfig(decoder_kind="wavenet", encoder_kind="r1",
                                    use_enhancer=False))
        stats = NormStats(np.log(1e-5), 2.5)
        sched = build_schedule(100, 1e-4, 0.06)
        p = tmp_path / "ck.pt"
        save_checkpoint(p, m, stats, sched, extra={"step": 7})
        m2, stats2, sched2 = model_from_checkpoint(p)
        assert param_fingerprint(m) == param_fingerprint(m2)
        for (ka, a), (kb, b) in zip(sorted(m.state_dict().items()),
                                    sorted(m2.state_dict().items())):
            assert ka == kb and torch.equal(a, b)
        assert stats2 == stats
        assert (sched2.T, sched2.beta_start, sched2.beta_end) == (100, 1e-4, 0.06)
        assert load_checkpoint(p)["extra"] == {"step": 7}

    def test_fingerprint_tracks_parameter_change(self):
        m = build_model(ModelConfig(use_enhancer=False, encoder_kind="r1"))
        before = param_fingerprint(m)
        with torch.no_grad():
            next(m.parameters()).add_(1.0)
        assert param_fingerprint(m) != before

    def test_missing_and_malformed_files(self, tmp_path):
        with pytest.raises(OSError):
            load_checkpoint(tmp_path / "absent.pt")
        bad = tmp_path / "bad.pt"
        torch.save({"weights": torch.zeros(3)}, bad)
        with pytest.raises(ValueError):
            load_checkpoint(bad)

    def test_version_gate(self, tmp_path):
        m = build_model(ModelConfig(use_enhancer=False, encoder_kind="r1"))
        p = tmp_path / "ck.pt"
        save_checkpoint(p, m, NormStats(0.0, 1.0), build_schedule(10, 0.01, 0.2))
        payload = torch.load(p, weights_only=True)
        payload["format_version"] = 99
        torch.save(payload, p)
        with pytest.raises(ValueError):
            load_checkpoint(p)


class TestModelAssembly:
    def test_enhancer_optional(self):
        m = build_model(ModelConfig(use_enhancer=False))
        x = torch.randn(1, 80, 63)
        assert torch.equal(m.enhance(x), x)
        m2 = build_model(ModelConfig(use_enhancer=True))
        assert isinstance(m2.enhancer, ResUNetEnhancer)

    def test_encoder_width_tracks_decoder(self):
        assert build_model(ModelConfig(decoder_kind="wavenet")).encoder.out_dim == 256
        assert build_model(ModelConfig(decoder_kind="unet")).encoder.out_dim == 80

    def test_isolated_embeddings_match_batched(self):
        m = build_model(ModelConfig()).eval()
        r = torch.randn(4, 80, 63)
        with torch.no_grad():
            batched = m.embed(r)
            single = torch.cat([m.embed(r[i : i + 1]) for i in range(4)])
        assert torch.allclose(batched, single, atol=1e-5)
