import itertools

import pytest
import torch
import torch.nn.functional as F

from pcnet.core import ScoreMap
from pcnet.model import (
    ASPP,
    BackboneSpec,
    EnhanceBlock,
    FRBlock,
    PCNet,
    PCNetConfig,
    UnitAttention,
    backbone_forward,
    build_backbone,
    load_checkpoint,
    save_checkpoint,
)


def tiny_config(**kw):
    return PCNetConfig(backbone=BackboneSpec.tiny(), input_size=64, decoder_channels=16, **kw)


def tiny_model(seed=0, **kw):
    torch.manual_seed(seed)
    return PCNet(tiny_config(**kw)).eval()


@pytest.fixture
def image():
    return torch.rand(2, 3, 64, 64, generator=torch.Generator().manual_seed(1))


def up(x):
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


class TestBackbone:
    def test_tiny_strides(self):
        feats = backbone_forward(build_backbone(BackboneSpec.tiny()), torch.rand(1, 3, 64, 64))
        assert [f.shape[-1] for f in feats] == [16, 8, 4, 2]
        assert [f.shape[1] for f in feats] == list(BackboneSpec.tiny().channels)

    def test_pvt_strides_at_704(self):
        bb = build_backbone(BackboneSpec.pvt()).eval()
        with torch.no_grad():
            feats = backbone_forward(bb, torch.rand(1, 3, 704, 704))
        assert [tuple(f.shape[-2:]) for f in feats] == [(176, 176), (88, 88), (44, 44), (22, 22)]
        assert [f.shape[1] for f in feats] == [64, 128, 320, 512]

    def test_indivisible_size_rejected(self):
        with pytest.raises(ValueError, match="divisible by 32"):
            backbone_forward(build_backbone(BackboneSpec.tiny()), torch.rand(1, 3, 48, 64))

    def test_deterministic(self):
        torch.manual_seed(0)
        bb = build_backbone(BackboneSpec.tiny()).eval()
        x = torch.rand(1, 3, 64, 64)
        for a, b in zip(bb(x), bb(x)):
            assert torch.equal(a, b)

    def test_missing_pretrained_weights_warn(self):
        with pytest.warns(UserWarning, match="random initialisation"):
            build_backbone(BackboneSpec.pvt(pretrained=True, weights_path="/nonexistent/pvt_v2_b2.pth"))

    def test_unknown_backbone(self):
        with pytest.raises(ValueError):
            BackboneSpec("resnet")


class TestBlocks:
    def test_unit_attention_gives_aspp(self):
        torch.manual_seed(0)
        eb = EnhanceBlock(8).eval()
        eb.attention = UnitAttention()
        f = torch.randn(1, 8, 6, 6)
        assert torch.equal(eb(f), eb.aspp(f))

    def test_attention_range(self):
        torch.manual_seed(0)
        eb = EnhanceBlock(8).eval()
        a = eb.attention(torch.randn(2, 8, 5, 5))
        assert a.shape == (2, 8, 5, 5) and torch.all((a > 0) & (a < 1))

    @pytest.mark.parametrize("train", [False, True])
    def test_zero_in_zero_out(self, train):
        torch.manual_seed(0)
        for block in (EnhanceBlock(8), FRBlock(8), ASPP(8)):
            block.train(train)
            assert torch.all(block(torch.zeros(2, 8, 4, 4)) == 0)

    def test_disabled_enhance_is_identity(self):
        f = torch.randn(1, 8, 4, 4)
        assert torch.equal(EnhanceBlock(8, enabled=False)(f), f)

    def test_fr_upsamples(self):
        x = torch.randn(1, 8, 4, 4)
        assert FRBlock(8).eval()(x).shape[-2:] == (8, 8)
        assert FRBlock(8, upsample=False).eval()(x).shape[-2:] == (4, 4)
        assert torch.equal(FRBlock(8, enabled=False)(x), up(x))


class TestForward:
    def test_shapes(self, image):
        out = tiny_model()(image)
        assert len(out) == 2
        for t in out.en_logits + out.ref_logits:
            assert t.shape == (2, 1, 64, 64)
        assert out.e_prime[0].shape[-2:] == (2, 2)
        assert [e.shape[-1] for e in out.enhanced[0]] == [16, 8, 4, 2]
        assert out.refined[0][0].shape[-2:] == out.features[0].shape[-2:]

    def test_mfr_trace_without_fr_blocks(self, image):
        out = tiny_model(fr_block=False)(image)
        lat = out.lateral
        expected = up(up(up(out.e_prime[0] + lat[3]) + lat[2]) + lat[1]) + lat[0]
        torch.testing.assert_close(out.refined[0][0], expected, rtol=0, atol=0)

    def test_single_iteration(self, image):
        out = tiny_model(iterations=1)(image)
        assert len(out.ref_logits) == len(out.en_logits) == 1

    def test_feedback_off_repeats_first_iteration(self, image):
        out = tiny_model(feedback=False)(image)
        assert torch.equal(out.ref_logits[0], out.ref_logits[1])
        assert torch.equal(out.en_logits[0], out.en_logits[1])

    def test_feedback_changes_second_iteration(self, image):
        out = tiny_model()(image)
        assert out.refined[0][0].abs().sum() > 0
        assert not torch.allclose(out.enhanced[0][0], out.enhanced[1][0])

    def test_feedback_identity_first_iteration(self, image):
        on = tiny_model(feedback=True)
        off = PCNet(tiny_config(feedback=False)).eval()
        off.load_state_dict(on.state_dict())
        a, b = on(image), off(image)
        assert torch.equal(a.en_logits[0], b.en_logits[0])
        assert torch.equal(a.ref_logits[0], b.ref_logits[0])

    @pytest.mark.parametrize("eb,fr,fb", list(itertools.product([False, True], repeat=3)))
    def test_toggle_combinations_finite(self, image, eb, fr, fb):
        out = tiny_model(enhance_block=eb, fr_block=fr, feedback=fb)(image)
        for t in out.en_logits + out.ref_logits:
            assert t.shape == (2, 1, 64, 64) and torch.isfinite(t).all()

    def test_training_mode_finite(self, image):
        model = tiny_model().train()
        out = model(image[:1])
        assert all(torch.isfinite(t).all() for t in out.ref_logits)

    def test_iterations_override(self, image):
        model = tiny_model()
        assert len(model(image, iterations=3)) == 3
        with pytest.raises(ValueError):
            model(image, iterations=0)

    def test_feedback_shape_checked(self, image):
        model = tiny_model()
        feats = model.extract(image)
        lat = [m(f) for m, f in zip(model.lateral, feats)]
        with pytest.raises(ValueError, match="feedback shape"):
            model.mgfe(feats, lat, torch.zeros(2, 3, 16, 16))

    def test_predict_returns_score_maps(self, image):
        maps = tiny_model().predict(image)
        assert len(maps) == 2 and all(isinstance(m, ScoreMap) and m.shape == (64, 64) for m in maps)

    def test_full_size_pvt(self):
        torch.manual_seed(0)
        model = PCNet(PCNetConfig()).eval()
        with torch.no_grad():
            out = model(torch.rand(1, 3, 704, 704))
        assert len(out) == 2
        assert all(t.shape == (1, 1, 704, 704) and torch.isfinite(t).all() for t in out.ref_logits + out.en_logits)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(iterations=0), dict(mu=-0.1), dict(input_size=100)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            PCNetConfig(backbone=BackboneSpec.tiny(), **kw)

    def test_defaults(self):
        cfg = PCNetConfig()
        assert (cfg.iterations, cfg.mu, cfg.input_size) == (2, 0.2, 704)

    def test_dict_round_trip(self):
        cfg = tiny_config(feedback=False)
        assert PCNetConfig.from_dict(cfg.to_dict()) == cfg


class TestCheckpoint:
    def test_round_trip(self, tmp_path, image):
        model = tiny_model()
        save_checkpoint(tmp_path / "m.pt", model, {"step": 3})
        loaded, extra = load_checkpoint(tmp_path / "m.pt", expect=model.config)
        assert extra == {"step": 3}
        assert loaded.config == model.config
        assert torch.equal(model(image).final, loaded(image).final)

    def test_mismatch(self, tmp_path):
        save_checkpoint(tmp_path / "m.pt", tiny_model())
        with pytest.raises(ValueError, match="fr_block"):
            load_checkpoint(tmp_path / "m.pt", expect=tiny_config(fr_block=False))

    def test_not_a_checkpoint(self, tmp_path):
        torch.save({"a": 1}, tmp_path / "x.pt")
        with pytest.raises(ValueError, match="not a PCNet checkpoint"):
            load_checkpoint(tmp_path / "x.pt")

    def test_bytes_deterministic(self, tmp_path):
        # the archive embeds the file stem, so compare same-named files
        save_checkpoint(tmp_path / "a" / "m.pt", tiny_model())
        save_checkpoint(tmp_path / "b" / "m.pt", tiny_model())
        assert (tmp_path / "a" / "m.pt").read_bytes() == (tmp_path / "b" / "m.pt").read_bytes()
