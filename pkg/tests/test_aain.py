"""Attention-guided AdaIN: map invariants, AdaIN reduction, loop-oracle equality."""

import numpy as np
import pytest
import torch

from oracles import check_gradients, loop_aain_forward, loop_linear, relative_error
from patchfill.aain import (
    AAINLayer,
    AttentionGate,
    StyleParams,
    StyleProjection,
    adain,
    fuse_styles,
    normalize_features,
)
from patchfill.errors import DimensionError
from patchfill.masks import BinaryMask, PatchRect


def random_mask(rng, size):
    side = int(rng.integers(1, size))
    top = int(rng.integers(0, size - side + 1))
    left = int(rng.integers(0, size - side + 1))
    return BinaryMask.from_rect(size, size, PatchRect(left, top, left + side - 1, top + side - 1))


def make_layer(rng, channels, style_dim, fp_channels, dtype=torch.float64):
    layer = AAINLayer(channels, style_dim, fp_channels).to(dtype)
    with torch.no_grad():
        for p in layer.parameters():
            p.copy_(torch.from_numpy(rng.standard_normal(tuple(p.shape))).to(dtype) * 0.5)
    return layer


class TestAdain:
    def test_prenormalized_input(self):
        torch.manual_seed(0)
        f = torch.randn(2, 3, 16, 16, dtype=torch.float64)
        f = normalize_features(f)
        out = adain(f, torch.full((3,), 2.0, dtype=torch.float64),
                    torch.full((3,), 0.5, dtype=torch.float64))
        assert torch.allclose(out, 2.0 * f + 0.5, atol=1e-9)

    def test_identity_styles_normalize(self):
        torch.manual_seed(1)
        f = torch.randn(2, 4, 8, 8, dtype=torch.float64) * 3.0 + 1.0
        out = adain(f, torch.ones(4, dtype=torch.float64), torch.zeros(4, dtype=torch.float64))
        assert out.mean(dim=(2, 3)).abs().max() < 1e-10
        assert (out.var(dim=(2, 3), unbiased=False).sqrt() - 1.0).abs().max() < 1e-6

    def test_constant_feature_degenerates_to_beta(self):
        f = torch.full((1, 2, 8, 8), 3.7, dtype=torch.float64)
        out = adain(f, torch.ones(2, dtype=torch.float64),
                    torch.tensor([0.25, -0.5], dtype=torch.float64))
        assert torch.allclose(out[0, 0], torch.full((8, 8), 0.25, dtype=torch.float64), atol=1e-6)
        assert torch.allclose(out[0, 1], torch.full((8, 8), -0.5, dtype=torch.float64), atol=1e-6)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            adain(torch.randn(1, 3, 4, 4), torch.ones(2), torch.zeros(2))


class TestStyleProjection:
    def test_identity_split(self):
        proj = StyleProjection(style_dim=8, channels=4)
        with torch.no_grad():
            proj.lin_tex.weight.copy_(torch.eye(8))
            proj.lin_tex.bias.zero_()
        t, _ = proj(torch.ones(1, 8), torch.zeros(1, 8))
        assert torch.equal(t.beta, torch.ones(1, 4))
        assert torch.equal(t.gamma, torch.ones(1, 4))

    def test_zero_weight_fuse_gives_bias(self):
        proj = StyleProjection(style_dim=8, channels=4)
        with torch.no_grad():
            proj.lin_fuse.weight.zero_()
            proj.lin_fuse.bias.copy_(torch.arange(8.0))
        for seed in (0, 1):
            torch.manual_seed(seed)
            _, f = proj(torch.randn(3, 8), torch.randn(3, 8))
            assert torch.allclose(f.beta, torch.arange(4.0).expand(3, 4))
            assert torch.allclose(f.gamma, torch.arange(4.0, 8.0).expand(3, 4))

    def test_matches_loop_matmul_oracle(self):
        rng = np.random.default_rng(42)
        proj = StyleProjection(style_dim=6, channels=3).double()
        with torch.no_grad():
            for p in proj.parameters():
                p.copy_(torch.from_numpy(rng.standard_normal(tuple(p.shape))))
        w_sty = torch.from_numpy(rng.standard_normal((2, 6)))
        w_id = torch.from_numpy(rng.standard_normal((2, 6)))
        t, f = proj(w_sty, w_id)
        tex = loop_linear(proj.lin_tex.weight.detach().numpy(),
                          proj.lin_tex.bias.detach().numpy(), w_sty.numpy())
        fuse = loop_linear(proj.lin_fuse.weight.detach().numpy(),
                           proj.lin_fuse.bias.detach().numpy(),
                           np.concatenate([w_sty.numpy(), w_id.numpy()], axis=1))
        assert relative_error(t.beta.detach().numpy(), tex[:, :3]) < 1e-6
        assert relative_error(t.gamma.detach().numpy(), tex[:, 3:]) < 1e-6
        assert relative_error(f.beta.detach().numpy(), fuse[:, :3]) < 1e-6
        assert relative_error(f.gamma.detach().numpy(), fuse[:, 3:]) < 1e-6


class TestAttentionGate:
    def test_no_hole_gives_exact_ones(self):
        torch.manual_seed(2)
        gate = AttentionGate(3, 4)
        m = BinaryMask.full_background(8, 8)
        out = gate(torch.randn(2, 3, 8, 8), torch.randn(2, 4, 8, 8), m.data)
        assert torch.equal(out, torch.ones(2, 1, 8, 8))

    def test_zero_conv_gives_half_in_hole(self):
        gate = AttentionGate(2, 2)
        with torch.no_grad():
            gate.conv.weight.zero_()
            gate.conv.bias.zero_()
        m = BinaryMask.from_rect(8, 8, PatchRect(2, 2, 5, 5))
        out = gate(torch.randn(1, 2, 8, 8), torch.randn(1, 2, 8, 8), m.data)
        hole = m.data == 0
        assert torch.all(out[0, 0][hole] == 0.5)
        assert torch.all(out[0, 0][~hole] == 1.0)

    def test_invariants_on_random_instances(self):
        rng = np.random.default_rng(7)
        for i in range(100):
            torch.manual_seed(i)
            c_p, c_in = int(rng.integers(1, 5)), int(rng.integers(1, 5))
            gate = AttentionGate(c_p, c_in)
            m = random_mask(rng, 8)
            out = gate(torch.randn(2, c_p, 8, 8) * 5, torch.randn(2, c_in, 8, 8) * 5, m.data)
            hole = m.data == 0
            assert torch.all(out[:, 0, hole] > 0.0)
            assert torch.all(out[:, 0, hole] < 1.0)
            assert torch.all(out[:, 0, ~hole] == 1.0)

    def test_spatial_mismatch(self):
        gate = AttentionGate(2, 2)
        with pytest.raises(DimensionError):
            gate(torch.randn(1, 2, 8, 8), torch.randn(1, 2, 4, 4), torch.ones(8, 8))


class TestFuseStyles:
    def test_saturated_attention_keeps_texture_styles(self):
        t = StyleParams(gamma=torch.tensor([[2.0, 3.0]]), beta=torch.tensor([[0.1, 0.2]]))
        f = StyleParams(gamma=torch.tensor([[4.0, 5.0]]), beta=torch.tensor([[0.7, 0.9]]))
        m = BinaryMask.from_rect(4, 4, PatchRect(1, 1, 2, 2)).data
        gamma_field, beta_field = fuse_styles(t, f, torch.ones(1, 1, 4, 4), m)
        assert torch.all(gamma_field[0, 0] == 2.0) and torch.all(gamma_field[0, 1] == 3.0)
        assert torch.all(beta_field[0, 0] == 0.1) and torch.all(beta_field[0, 1] == 0.2)

    def test_midpoint_attention(self):
        t = StyleParams(gamma=torch.tensor([[2.0]]), beta=torch.tensor([[0.0]]))
        f = StyleParams(gamma=torch.tensor([[4.0]]), beta=torch.tensor([[1.0]]))
        m = BinaryMask.from_rect(2, 2, PatchRect(0, 0, 0, 0)).data
        d_h = torch.full((1, 1, 2, 2), 0.5)
        gamma_field, beta_field = fuse_styles(t, f, d_h, m)
        assert gamma_field[0, 0, 0, 0] == 3.0
        assert beta_field[0, 0, 0, 0] == 0.5

    def test_background_exact(self):
        torch.manual_seed(3)
        t = StyleParams(gamma=torch.randn(2, 3), beta=torch.randn(2, 3))
        f = StyleParams(gamma=torch.randn(2, 3), beta=torch.randn(2, 3))
        m = BinaryMask.from_rect(6, 6, PatchRect(1, 1, 3, 4)).data
        d_h = torch.rand(2, 1, 6, 6) * (1 - m) + m
        gamma_field, beta_field = fuse_styles(t, f, d_h, m)
        bg = m == 1
        for n in range(2):
            for c in range(3):
                assert torch.all(gamma_field[n, c][bg] == t.gamma[n, c])
                assert torch.all(beta_field[n, c][bg] == t.beta[n, c])

    def test_convex_combination_bounds(self):
        rng = np.random.default_rng(11)
        for i in range(20):
            torch.manual_seed(100 + i)
            t = StyleParams(gamma=torch.randn(1, 4), beta=torch.randn(1, 4))
            f = StyleParams(gamma=torch.randn(1, 4), beta=torch.randn(1, 4))
            m = random_mask(rng, 8).data
            d_h = torch.rand(1, 1, 8, 8) * (1 - m) + m
            gamma_syn = d_h * t.gamma[:, :, None, None] + (1 - d_h) * f.gamma[:, :, None, None]
            lo = torch.minimum(t.gamma, f.gamma)[:, :, None, None]
            hi = torch.maximum(t.gamma, f.gamma)[:, :, None, None]
            assert torch.all(gamma_syn >= lo - 1e-6) and torch.all(gamma_syn <= hi + 1e-6)


class TestAAINLayer:
    def test_no_hole_reduces_to_adain(self):
        rng = np.random.default_rng(20)
        for i in range(10):
            layer = make_layer(rng, channels=4, style_dim=8, fp_channels=3)
            f_i = torch.from_numpy(rng.standard_normal((2, 4, 8, 8)))
            f_p = torch.from_numpy(rng.standard_normal((2, 3, 8, 8)))
            w_sty = torch.from_numpy(rng.standard_normal((2, 8)))
            w_id = torch.from_numpy(rng.standard_normal((2, 8)))
            m = BinaryMask.full_background(8, 8).data.double()
            out = layer(f_i, f_p, w_sty, w_id, m)
            t, _ = layer.styles(w_sty, w_id)
            ref = adain(f_i, t.gamma, t.beta)
            assert (out - ref).abs().max() < 1e-6

    def test_no_hole_ignores_identity_embedding(self):
        rng = np.random.default_rng(21)
        layer = make_layer(rng, channels=4, style_dim=8, fp_channels=3)
        f_i = torch.from_numpy(rng.standard_normal((2, 4, 8, 8)))
        f_p = torch.from_numpy(rng.standard_normal((2, 3, 8, 8)))
        w_sty = torch.from_numpy(rng.standard_normal((2, 8)))
        m = BinaryMask.full_background(8, 8).data.double()
        out1 = layer(f_i, f_p, w_sty, torch.from_numpy(rng.standard_normal((2, 8))), m)
        out2 = layer(f_i, f_p, w_sty, torch.from_numpy(rng.standard_normal((2, 8))), m)
        assert (out1 - out2).abs().max() <= 1e-6

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(22)
        for i in range(20):
            c = int(rng.integers(2, 5))
            c_p = int(rng.integers(1, 4))
            d = int(rng.integers(4, 9))
            layer = make_layer(rng, channels=c, style_dim=d, fp_channels=c_p)
            f_i = torch.from_numpy(rng.standard_normal((2, c, 8, 8)))
            f_p = torch.from_numpy(rng.standard_normal((2, c_p, 8, 8)))
            w_sty = torch.from_numpy(rng.standard_normal((2, d)))
            w_id = torch.from_numpy(rng.standard_normal((2, d)))
            m = random_mask(rng, 8).data.double()
            out = layer(f_i, f_p, w_sty, w_id, m)
            ref = loop_aain_forward(layer, f_i, f_p, w_sty, w_id, m)
            assert relative_error(out.detach().numpy(), ref) < 1e-6

    def test_parameter_gradients_match_finite_differences(self):
        rng = np.random.default_rng(23)
        for seed in range(10):
            layer = make_layer(np.random.default_rng(seed), channels=3, style_dim=4, fp_channels=2)
            f_i = torch.from_numpy(rng.standard_normal((1, 3, 6, 6)))
            f_p = torch.from_numpy(rng.standard_normal((1, 2, 6, 6)))
            w_sty = torch.from_numpy(rng.standard_normal((1, 4)))
            w_id = torch.from_numpy(rng.standard_normal((1, 4)))
            m = random_mask(rng, 6).data.double()
            probe = torch.from_numpy(rng.standard_normal((1, 3, 6, 6)))

            def loss():
                return (layer(f_i, f_p, w_sty, w_id, m) * probe).sum()

            params = list(layer.parameters())
            errs, _, _ = check_gradients(loss, params)
            assert max(errs) <= 1e-4

    def test_identity_embedding_gradient_flows(self):
        rng = np.random.default_rng(24)
        layer = make_layer(rng, channels=3, style_dim=4, fp_channels=2)
        w_id = torch.from_numpy(rng.standard_normal((1, 4))).requires_grad_(True)
        m = BinaryMask.from_rect(6, 6, PatchRect(1, 1, 3, 3)).data.double()
        out = layer(
            torch.from_numpy(rng.standard_normal((1, 3, 6, 6))),
            torch.from_numpy(rng.standard_normal((1, 2, 6, 6))),
            torch.from_numpy(rng.standard_normal((1, 4))),
            w_id, m,
        )
        out.sum().backward()
        assert w_id.grad is not None and w_id.grad.abs().sum() > 0
