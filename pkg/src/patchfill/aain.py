"""AdaIN and its attention-guided variant used inside the generator blocks.

The attention-guided layer normalizes a feature map, then modulates it with a
spatial blend of two style sets: attacker-only styles on the background and an
attention-weighted mix of attacker and identity-fused styles inside the hole.
All tensors are [N,C,H,W]; style vectors are [N,D] slices of the [N,L,D]
extended-latent embeddings; masks are [H,W] or [N,1,H,W] with background at 1.
"""

from __future__ import annotations

from typing import NamedTuple, Tuple

import torch
import torch.nn as nn

from .errors import DimensionError

INSTANCE_NORM_EPS = 1e-8


class StyleParams(NamedTuple):
    """Per-channel modulation pair; each entry is [N,C]."""

    gamma: torch.Tensor
    beta: torch.Tensor


def instance_stats(f: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Spatial mean and (population) std per sample and channel, shape [N,C,1,1]."""
    mu = f.mean(dim=(2, 3), keepdim=True)
    sigma = f.var(dim=(2, 3), keepdim=True, unbiased=False).sqrt()
    return mu, sigma


def normalize_features(f: torch.Tensor) -> torch.Tensor:
    """Instance-normalize: (f - mu) / (sigma + eps) over spatial locations."""
    mu, sigma = instance_stats(f)
    return (f - mu) / (sigma + INSTANCE_NORM_EPS)


def _as_nc(v: torch.Tensor, channels: int) -> torch.Tensor:
    if v.dim() == 1:
        v = v.unsqueeze(0)
    if v.shape[-1] != channels:
        raise DimensionError(f"style vector has {v.shape[-1]} channels, feature map has {channels}")
    return v


def adain(f: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    """Classic adaptive instance normalization: gamma * norm(f) + beta."""
    n, c = f.shape[:2]
    gamma = _as_nc(gamma, c).view(-1, c, 1, 1)
    beta = _as_nc(beta, c).view(-1, c, 1, 1)
    return gamma * normalize_features(f) + beta


def _mask_as_n1hw(mask: torch.Tensor, h: int, w: int) -> torch.Tensor:
    if mask.dim() == 2:
        mask = mask.view(1, 1, *mask.shape)
    elif mask.dim() != 4 or mask.shape[1] != 1:
        raise DimensionError(f"mask must be [H,W] or [N,1,H,W], got {tuple(mask.shape)}")
    if mask.shape[-2:] != (h, w):
        raise DimensionError(f"mask {tuple(mask.shape[-2:])} does not match features {h}x{w}")
    return mask


class StyleProjection(nn.Module):
    """The two learnable affine maps producing texture and fused style pairs.

    ``lin_tex`` reads the attacker style vector alone; ``lin_fuse`` reads the
    concatenated attacker and identity vectors. Both emit [beta, gamma] halves.
    The gamma biases start at 1 so modulation begins near identity.
    """

    def __init__(self, style_dim: int, channels: int):
        super().__init__()
        self.channels = channels
        self.lin_tex = nn.Linear(style_dim, 2 * channels)
        self.lin_fuse = nn.Linear(2 * style_dim, 2 * channels)
        with torch.no_grad():
            self.lin_tex.bias[channels:].fill_(1.0)
            self.lin_fuse.bias[channels:].fill_(1.0)

    def forward(self, w_sty: torch.Tensor, w_id: torch.Tensor) -> Tuple[StyleParams, StyleParams]:
        if w_sty.dim() == 1:
            w_sty = w_sty.unsqueeze(0)
        if w_id.dim() == 1:
            w_id = w_id.unsqueeze(0)
        tex = self.lin_tex(w_sty)
        fuse = self.lin_fuse(torch.cat([w_sty, w_id], dim=-1))
        c = self.channels
        t = StyleParams(gamma=tex[:, c:], beta=tex[:, :c])
        f = StyleParams(gamma=fuse[:, c:], beta=fuse[:, :c])
        return t, f


class AttentionGate(nn.Module):
    """Background-patch cross-attention map: exactly 1 on background, (0,1) in the hole."""

    def __init__(self, fp_channels: int, in_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(fp_channels + in_channels, 1, kernel_size=3, padding=1)

    def forward(self, f_p: torch.Tensor, f_in: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        if f_p.shape[-2:] != f_in.shape[-2:]:
            raise DimensionError(
                f"spatial dims differ: {tuple(f_p.shape[-2:])} vs {tuple(f_in.shape[-2:])}"
            )
        m = _mask_as_n1hw(mask, *f_in.shape[-2:])
        gate = torch.sigmoid(self.conv(torch.cat([f_p, f_in], dim=1)))
        return gate * (1.0 - m) + m


def fuse_styles(
    t: StyleParams,
    f: StyleParams,
    d_h: torch.Tensor,
    mask: torch.Tensor,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Blend style pairs into spatial modulation fields [N,C,H,W].

    Inside the hole the attention map mixes attacker and fused styles
    (gamma_syn = D_h*gamma_t + (1-D_h)*gamma_f); background positions keep the
    attacker styles exactly.
    """
    h, w = d_h.shape[-2:]
    m = _mask_as_n1hw(mask, h, w)
    gamma_t = t.gamma[:, :, None, None]
    beta_t = t.beta[:, :, None, None]
    gamma_f = f.gamma[:, :, None, None]
    beta_f = f.beta[:, :, None, None]
    gamma_syn = d_h * gamma_t + (1.0 - d_h) * gamma_f
    beta_syn = d_h * beta_t + (1.0 - d_h) * beta_f
    gamma_field = m * gamma_t + (1.0 - m) * gamma_syn
    beta_field = m * beta_t + (1.0 - m) * beta_syn
    return gamma_field, beta_field


class AAINLayer(nn.Module):
    """One attention-guided AdaIN layer (owns its projections and gate conv)."""

    def __init__(self, channels: int, style_dim: int, fp_channels: int):
        super().__init__()
        self.styles = StyleProjection(style_dim, channels)
        self.attention = AttentionGate(fp_channels, channels)

    def forward(
        self,
        f_i: torch.Tensor,
        f_p: torch.Tensor,
        w_sty: torch.Tensor,
        w_id: torch.Tensor,
        mask: torch.Tensor,
    ) -> torch.Tensor:
        f_norm = normalize_features(f_i)
        t, f = self.styles(w_sty, w_id)
        d_h = self.attention(f_p, f_norm, mask)
        gamma_field, beta_field = fuse_styles(t, f, d_h, mask)
        return gamma_field * f_norm + beta_field
