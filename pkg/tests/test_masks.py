"""Mask algebra: composition identities, boundary distances, discounted weights."""

import math

import numpy as np
import pytest
import torch

from patchfill.errors import ConfigError, DimensionError, DomainError
from patchfill.masks import (
    BinaryMask,
    DiscountedMask,
    ImageTensor,
    PatchRect,
    boundary_distance,
    compose,
    compose_output,
    downsample_mask,
    make_discounted_mask,
    max_patch_area,
)


def random_rect(rng, h, w, max_side=None):
    max_side = max_side or min(h, w)
    rh = int(rng.integers(1, max_side + 1))
    rw = int(rng.integers(1, max_side + 1))
    top = int(rng.integers(0, h - rh + 1))
    left = int(rng.integers(0, w - rw + 1))
    return PatchRect(left, top, left + rw - 1, top + rh - 1)


def brute_force_boundary_distance(rect, row, col):
    """Min distance to any pixel of the outermost ring of the rect."""
    best = None
    for r in range(rect.top, rect.bottom + 1):
        for c in range(rect.left, rect.right + 1):
            on_ring = r in (rect.top, rect.bottom) or c in (rect.left, rect.right)
            if not on_ring:
                continue
            d = max(abs(r - row), abs(c - col))
            best = d if best is None else min(best, d)
    return best


class TestPatchRect:
    def test_rejects_inverted(self):
        with pytest.raises(DomainError):
            PatchRect(5, 0, 4, 3)
        with pytest.raises(DomainError):
            PatchRect(-1, 0, 3, 3)

    def test_geometry(self):
        r = PatchRect(2, 3, 5, 7)
        assert (r.width, r.height, r.area) == (4, 5, 20)
        assert r.contains(3, 2) and not r.contains(8, 2)

    def test_area_bound_scales(self):
        assert max_patch_area(256, 256) == 5000
        assert max_patch_area(64, 64) == 312
        assert PatchRect(0, 0, 24, 11).exceeds_area_bound(64, 64) is False  # 12x25 = 300
        assert PatchRect(0, 0, 24, 12).exceeds_area_bound(64, 64) is True   # 13x25 = 325


class TestCompose:
    def test_no_hole_returns_source(self):
        x_syn = ImageTensor(torch.rand(3, 8, 8))
        x_s = ImageTensor(torch.rand(3, 8, 8))
        m = BinaryMask.full_background(8, 8)
        out = compose_output(x_syn, x_s, m)
        assert torch.equal(out.data, x_s.data)

    def test_full_hole_returns_synth(self):
        x_syn = ImageTensor(torch.rand(3, 8, 8))
        x_s = ImageTensor(torch.rand(3, 8, 8))
        m = BinaryMask.from_rect(8, 8, PatchRect(0, 0, 7, 7))
        out = compose_output(x_syn, x_s, m)
        assert torch.equal(out.data, x_syn.data)

    def test_piecewise_constant(self):
        x_syn = ImageTensor(torch.full((1, 4, 8), 0.2))
        x_s = ImageTensor(torch.full((1, 4, 8), 0.8))
        m = BinaryMask.from_rect(4, 8, PatchRect(0, 0, 3, 3))  # left half is hole
        out = compose_output(x_syn, x_s, m).data
        assert torch.all(out[:, :, :4] == 0.2)
        assert torch.all(out[:, :, 4:] == 0.8)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            compose(torch.rand(3, 8, 8), torch.rand(3, 8, 9), torch.ones(8, 8))
        with pytest.raises(DimensionError):
            compose(torch.rand(3, 8, 8), torch.rand(3, 8, 8), torch.ones(4, 4))

    def test_self_composition_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = torch.from_numpy(rng.standard_normal((3, 16, 16))).float()
            m = BinaryMask.from_rect(16, 16, random_rect(rng, 16, 16))
            assert torch.equal(compose(x, x, m.data), x)

    def test_linearity(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            a = torch.from_numpy(rng.standard_normal((3, 8, 8)))
            b = torch.from_numpy(rng.standard_normal((3, 8, 8)))
            c = torch.from_numpy(rng.standard_normal((3, 8, 8)))
            d = torch.from_numpy(rng.standard_normal((3, 8, 8)))
            m = BinaryMask.from_rect(8, 8, random_rect(rng, 8, 8)).data.double()
            lhs = compose(2.0 * a + b, 2.0 * c + d, m)
            rhs = 2.0 * compose(a, c, m) + compose(b, d, m)
            assert torch.allclose(lhs, rhs, atol=1e-12)

    def test_background_bitwise_preserved(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            x_syn = torch.from_numpy(rng.standard_normal((3, 16, 16))).float()
            x_s = torch.from_numpy(rng.standard_normal((3, 16, 16))).float()
            rect = random_rect(rng, 16, 16)
            m = BinaryMask.from_rect(16, 16, rect)
            out = compose(x_syn, x_s, m.data)
            bg = m.data.bool()
            assert torch.equal(out[:, bg], x_s[:, bg])

    def test_differentiable_wrt_synth(self):
        x_syn = torch.rand(3, 8, 8, requires_grad=True)
        x_s = torch.rand(3, 8, 8)
        m = BinaryMask.from_rect(8, 8, PatchRect(2, 2, 5, 5))
        compose(x_syn, x_s, m.data).sum().backward()
        assert torch.equal(x_syn.grad, (1.0 - m.data).expand(3, 8, 8))


class TestBoundaryDistance:
    def test_ring_is_zero(self):
        rect = PatchRect(2, 2, 6, 6)
        for col in range(2, 7):
            assert boundary_distance(rect, (2, col)) == 0
            assert boundary_distance(rect, (6, col)) == 0

    def test_center_of_5x5(self):
        rect = PatchRect(2, 2, 6, 6)
        assert boundary_distance(rect, (4, 4)) == 2

    def test_50x100_reference_pixel(self):
        # pixel 3 rows below the top edge, horizontally centered, of a 50x100 hole
        rect = PatchRect(10, 20, 109, 69)
        row, col = rect.top + 3, (rect.left + rect.right) // 2
        expected = brute_force_boundary_distance(rect, row, col)
        assert expected == 3
        assert boundary_distance(rect, (row, col)) == expected

    def test_outside_raises(self):
        with pytest.raises(DomainError):
            boundary_distance(PatchRect(2, 2, 6, 6), (1, 3))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            rect = random_rect(rng, 20, 20, max_side=9)
            row = int(rng.integers(rect.top, rect.bottom + 1))
            col = int(rng.integers(rect.left, rect.right + 1))
            assert boundary_distance(rect, (row, col)) == brute_force_boundary_distance(rect, row, col)


class TestDiscountedMask:
    def test_background_is_one(self):
        m = BinaryMask.from_rect(16, 16, PatchRect(4, 4, 9, 9))
        d = make_discounted_mask(m)
        bg = m.data.bool()
        assert torch.all(d.data[bg] == 1.0)

    def test_rim_value(self):
        m = BinaryMask.from_rect(8, 8, PatchRect(2, 2, 5, 5))
        d = make_discounted_mask(m, alpha=0.15)
        assert d.data[2, 2] == pytest.approx(1.0 / 0.15, abs=1e-12)

    def test_depth_three_value(self):
        m = BinaryMask.from_rect(16, 16, PatchRect(2, 2, 13, 13))
        d = make_discounted_mask(m, alpha=0.15)
        # center-ish pixel at distance 3 from the nearest edge
        assert boundary_distance(m.rect, (5, 7)) == 3
        assert d.data[5, 7].item() == pytest.approx(1.0 / (0.15 * math.exp(3.0)), rel=1e-12)
        assert d.data[5, 7].item() == pytest.approx(0.331914, abs=1e-6)

    def test_rejects_bad_alpha(self):
        m = BinaryMask.from_rect(8, 8, PatchRect(2, 2, 5, 5))
        with pytest.raises(ConfigError):
            make_discounted_mask(m, alpha=0.0)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            h = int(rng.integers(8, 33))
            w = int(rng.integers(8, 33))
            rect = random_rect(rng, h, w)
            m = BinaryMask.from_rect(h, w, rect)
            d = make_discounted_mask(m, alpha=0.15)
            for row in range(h):
                for col in range(w):
                    if rect.contains(row, col):
                        l = brute_force_boundary_distance(rect, row, col)
                        want = 1.0 / (0.15 * math.exp(l))
                    else:
                        want = 1.0
                    assert abs(d.data[row, col].item() - want) <= 1e-12

    def test_strictly_decreasing_with_depth(self):
        m = BinaryMask.from_rect(32, 32, PatchRect(4, 4, 27, 27))
        d = make_discounted_mask(m)
        center = d.data[16, 4:16]
        assert torch.all(center[1:] < center[:-1])

    def test_translation_invariance(self):
        base = PatchRect(1, 1, 6, 4)
        m1 = make_discounted_mask(BinaryMask.from_rect(20, 20, base)).data
        m2 = make_discounted_mask(BinaryMask.from_rect(20, 20, base.shifted(7, 9))).data
        assert torch.equal(m1[1:5, 1:7], m2[8:12, 10:16])


class TestDownsample:
    def test_all_background(self):
        m = BinaryMask.full_background(64, 64)
        out = downsample_mask(m, 8, 8)
        assert torch.all(out.data == 1.0) and out.rect is None

    def test_full_hole(self):
        m = BinaryMask.from_rect(64, 64, PatchRect(0, 0, 63, 63))
        out = downsample_mask(m, 4, 4)
        assert torch.all(out.data == 0.0)

    def test_worked_example(self):
        m = BinaryMask.from_rect(64, 64, PatchRect(8, 8, 23, 23))
        out = downsample_mask(m, 16, 16)
        assert out.rect == PatchRect(2, 2, 5, 5)
        out.validate()

    def test_non_divisible_raises(self):
        m = BinaryMask.full_background(64, 64)
        with pytest.raises(DimensionError):
            downsample_mask(m, 7, 7)

    def test_any_hole_semantics_against_enumeration(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            rect = random_rect(rng, 32, 32)
            m = BinaryMask.from_rect(32, 32, rect)
            for t in (16, 8, 4):
                out = downsample_mask(m, t, t)
                f = 32 // t
                blocks = m.data.view(t, f, t, f)
                expected = (blocks.amin(dim=(1, 3)) > 0).float()
                assert torch.equal(out.data, expected)
                out.validate()
