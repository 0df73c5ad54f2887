import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from offroadseg.model import (
    EmptyLossWarning,
    ModelConfig,
    PyramidBackbone,
    UPerNetDecoder,
    build_model,
    cross_entropy_loss,
    normalize_images,
)
from offroadseg.rng import RngStream
from offroadseg.taxonomy import IGNORE_ID


def tiny_config(**over) -> ModelConfig:
    base = dict(backbone_channels=(8, 16, 24, 32), decoder_channels=16, psp_bin_sizes=(1,), norm_groups=8)
    base.update(over)
    return ModelConfig(**base)


class TestModelConfig:
    def test_defaults_valid(self):
        cfg = ModelConfig()
        assert cfg.num_classes == 9 and cfg.psp_bin_sizes == (1, 2, 3, 6)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(num_classes=8),
            dict(backbone_channels=(8, 16, 24)),
            dict(psp_bin_sizes=(2, 1)),
            dict(psp_bin_sizes=(1, 1)),
            dict(norm_kind="layer"),
            dict(backbone_channels=(10, 16, 24, 32), norm_groups=8),
            dict(blocks_per_stage=0),
        ],
    )
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ModelConfig(**kwargs)


class TestBackbone:
    def test_64_input_level_sizes(self):
        bb = PyramidBackbone(tiny_config())
        levels = bb(torch.zeros(1, 3, 64, 64))
        assert [tuple(l.shape[-2:]) for l in levels] == [(16, 16), (8, 8), (4, 4), (2, 2)]
        assert [l.shape[1] for l in levels] == [8, 16, 24, 32]

    def test_2048_input_level_sizes(self):
        bb = PyramidBackbone(tiny_config())
        with torch.no_grad():
            levels = bb(torch.zeros(1, 3, 2048, 2048))
        assert [tuple(l.shape[-2:]) for l in levels] == [(512, 512), (256, 256), (128, 128), (64, 64)]

    def test_non_divisible_input_rejected(self):
        bb = PyramidBackbone(tiny_config())
        with pytest.raises(ValueError, match="divisible by 32"):
            bb(torch.zeros(1, 3, 65, 64))


class TestDecoder:
    def constant_pyramid(self, cfg, size=8, value=0.7, dtype=torch.float32):
        sizes = [size, size // 2, size // 4, size // 8]
        return tuple(
            torch.full((1, c, s, s), value, dtype=dtype) for c, s in zip(cfg.backbone_channels, sizes)
        )

    def test_constant_pyramid_gives_constant_output(self):
        # float64: group normalization amplifies constant-input rounding noise
        # by 1/sqrt(eps), so the invariant is only crisp in double precision
        torch.manual_seed(0)
        cfg = tiny_config()
        dec = UPerNetDecoder(cfg).double()
        dec.eval()
        with torch.no_grad():
            out = dec(self.constant_pyramid(cfg, dtype=torch.float64))
        flat = out.flatten(2)
        ref = flat[..., :1]
        assert torch.allclose(flat, ref.expand_as(flat), atol=1e-9), (
            f"spatial spread {float((flat - ref).abs().max())}"
        )

    def test_output_shape_contract(self):
        torch.manual_seed(0)
        cfg = tiny_config()
        dec = UPerNetDecoder(cfg)
        levels = self.constant_pyramid(cfg, size=16, value=0.1)
        out = dec(levels)
        assert out.shape == (1, cfg.decoder_channels, 16, 16)

    def test_zeroing_deepest_level_changes_output(self):
        torch.manual_seed(1)
        cfg = tiny_config()
        dec = UPerNetDecoder(cfg)
        dec.eval()
        g = torch.Generator().manual_seed(5)
        levels = tuple(
            torch.randn((1, c, s, s), generator=g)
            for c, s in zip(cfg.backbone_channels, (8, 4, 2, 1))
        )
        ablated = (*levels[:-1], torch.zeros_like(levels[-1]))
        with torch.no_grad():
            assert not torch.allclose(dec(levels), dec(ablated)), "deepest level is dead"

    def test_channel_mismatch_rejected(self):
        cfg = tiny_config()
        dec = UPerNetDecoder(cfg)
        levels = self.constant_pyramid(cfg)
        bad = (*levels[:-1], torch.zeros(1, 8, 1, 1))
        with pytest.raises(ValueError, match="channel mismatch"):
            dec(bad)
        with pytest.raises(ValueError, match="levels"):
            dec(levels[:3])

    def test_psp_bin_exceeding_feature_rejected(self):
        model = build_model(ModelConfig(
            backbone_channels=(8, 16, 24, 32), decoder_channels=16, norm_groups=8,
            psp_bin_sizes=(1, 2, 3, 6),
        ), seed=0)
        with pytest.raises(ValueError, match="psp bin"):
            model(torch.zeros(1, 3, 64, 64))


class TestSegment:
    def test_logit_shape(self):
        model = build_model(tiny_config(), seed=0)
        out = model(torch.zeros(2, 3, 64, 64))
        assert out.shape == (2, 9, 64, 64)

    def test_softmax_sums_to_one(self):
        model = build_model(tiny_config(), seed=0)
        with torch.no_grad():
            out = model(torch.randn(1, 3, 32, 32))
        sums = torch.softmax(out, dim=1).sum(dim=1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)

    def test_identical_batch_entries_identical_logits(self):
        model = build_model(tiny_config(), seed=0)
        model.eval()
        x = torch.randn(1, 3, 32, 32)
        with torch.no_grad():
            out = model(torch.cat([x, x], dim=0))
        assert torch.allclose(out[0], out[1], atol=1e-6)

    @settings(max_examples=6, deadline=None)
    @given(hf=st.integers(1, 5), wf=st.integers(1, 5))
    def test_shape_contract_over_sizes(self, hf, wf):
        model = build_model(tiny_config(), seed=0)
        model.eval()
        h, w = 32 * hf, 32 * wf
        with torch.no_grad():
            out = model(torch.zeros(1, 3, h, w))
        assert out.shape == (1, 9, h, w)


class TestNormalizeImages:
    def test_values_and_layout(self):
        cfg = tiny_config()
        img = np.full((4, 4, 3), 255, dtype=np.uint8)
        x = normalize_images(img, cfg)
        assert x.shape == (1, 3, 4, 4)
        expected = (1.0 - cfg.input_mean[0]) / cfg.input_std[0]
        assert abs(float(x[0, 0, 0, 0]) - expected) < 1e-6

    def test_batch_passthrough(self):
        x = normalize_images(np.zeros((2, 8, 8, 3), np.uint8), tiny_config())
        assert x.shape == (2, 3, 8, 8)

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            normalize_images(np.zeros((8, 8), np.uint8), tiny_config())


class TestCrossEntropy:
    def test_uniform_logits_ln9(self):
        logits = torch.zeros(1, 9, 4, 4)
        labels = torch.randint(0, 9, (1, 4, 4))
        loss = cross_entropy_loss(logits, labels)
        assert abs(float(loss) - math.log(9)) < 1e-6

    def test_saturated_correct_prediction(self):
        labels = torch.randint(0, 9, (1, 5, 5))
        logits = torch.zeros(1, 9, 5, 5)
        logits.scatter_(1, labels.unsqueeze(1), 20.0)
        assert float(cross_entropy_loss(logits, labels)) < 1e-6

    def test_ignored_pixels_excluded(self):
        g = torch.Generator().manual_seed(3)
        logits = torch.randn(1, 9, 6, 6, generator=g)
        labels = torch.randint(0, 9, (1, 6, 6), generator=g)
        labels[:, :, 3:] = IGNORE_ID
        loss = cross_entropy_loss(logits, labels)
        # oracle: per-pixel loop over the non-ignored half
        logp = torch.log_softmax(logits.double(), dim=1)
        acc, n = 0.0, 0
        for i in range(6):
            for j in range(6):
                lab = int(labels[0, i, j])
                if lab == IGNORE_ID:
                    continue
                acc += -float(logp[0, lab, i, j])
                n += 1
        assert n == 18
        assert abs(float(loss) - acc / n) < 1e-6

    def test_all_ignored_warns_and_returns_zero(self):
        logits = torch.randn(1, 9, 4, 4, requires_grad=True)
        labels = torch.full((1, 4, 4), IGNORE_ID)
        with pytest.warns(EmptyLossWarning):
            loss = cross_entropy_loss(logits, labels)
        assert float(loss.detach()) == 0.0
        loss.backward()
        assert logits.grad is not None

    def test_out_of_range_label_rejected(self):
        logits = torch.zeros(1, 9, 2, 2)
        with pytest.raises(ValueError, match="labels outside"):
            cross_entropy_loss(logits, torch.full((1, 2, 2), 9))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            cross_entropy_loss(torch.zeros(1, 9, 4, 4), torch.zeros(1, 5, 5, dtype=torch.long))

    def test_batch_permutation_equivariance(self):
        model = build_model(tiny_config(), seed=2)
        model.eval()
        g = torch.Generator().manual_seed(0)
        x = torch.randn(3, 3, 32, 32, generator=g)
        labels = torch.randint(0, 9, (3, 32, 32), generator=g)
        with torch.no_grad():
            fwd = model(x).double()
            perm = torch.tensor([2, 0, 1])
            fwd_p = model(x[perm]).double()
        a = cross_entropy_loss(fwd, labels)
        b = cross_entropy_loss(fwd_p, labels[perm])
        assert abs(float(a) - float(b)) < 1e-9


class TestGradientCheck:
    def test_analytic_matches_finite_difference(self):
        torch.manual_seed(0)
        cfg = tiny_config()
        model = build_model(cfg, seed=0).double()
        model.eval()
        g = torch.Generator().manual_seed(7)
        img = torch.rand(1, 3, 32, 32, generator=g, dtype=torch.float64)
        labels = torch.randint(0, 9, (1, 32, 32), generator=g)

        def loss_fn():
            return cross_entropy_loss(model(img), labels)

        loss = loss_fn()
        loss.backward()
        worst = 0.0
        sel = RngStream(99)
        for name, p in model.named_parameters():
            grad = p.grad
            assert grad is not None, name
            flat = grad.flatten()
            idxs = {int(flat.abs().argmax())}
            idxs.add(sel.randint(0, flat.numel() - 1))
            for idx in idxs:
                analytic = float(flat[idx])
                with torch.no_grad():
                    orig = float(p.flatten()[idx])
                    h = 1e-5 * max(1.0, abs(orig))
                    p.flatten()[idx] = orig + h
                    up = float(loss_fn())
                    p.flatten()[idx] = orig - h
                    down = float(loss_fn())
                    p.flatten()[idx] = orig
                numeric = (up - down) / (2 * h)
                # combined tolerance: the atol floor absorbs finite-difference
                # roundoff (~1e-11) on near-zero entries, rtol is the real check
                diff = abs(analytic - numeric)
                scale = max(abs(analytic), abs(numeric))
                assert diff <= 1e-9 + 1e-4 * scale, (
                    f"{name}[{idx}]: analytic {analytic} vs numeric {numeric} (diff {diff})"
                )
                if scale > 1e-6:
                    worst = max(worst, diff / scale)
        assert worst <= 1e-4
