"""Loss terms for both attack stages.

Images are [C,H,W] or [N,C,H,W]; squared-error losses sum over all elements of
an image and average over the batch. Every loss here is differentiable w.r.t.
its image inputs and checked against central finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Sequence, Union, runtime_checkable

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DimensionError, DomainError
from .masks import BinaryMask, DiscountedMask, PatchRect, compose
from .networks import FRBackbone

_NORM_EPS = 1e-10


@dataclass(frozen=True)
class LossWeights:
    """Balance weights for the composite objectives; all terms default to 1
    except the boundary-variance weight (0.01) and the penalty coefficients (10)."""

    lambda_adv: float = 1.0
    lambda_rec: float = 1.0
    lambda_lpips: float = 1.0
    lambda_dis: float = 1.0
    lambda_bv: float = 0.01
    gp_coeff: float = 10.0
    r1_coeff: float = 10.0

    def __post_init__(self):
        for name in ("lambda_adv", "lambda_rec", "lambda_lpips", "lambda_dis",
                     "lambda_bv", "gp_coeff", "r1_coeff"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")


# ----------------------------- feature extractor -----------------------------

@runtime_checkable
class FeatureExtractor(Protocol):
    """Frozen multi-layer feature stack shared by the LPIPS and FID metrics.

    A pretrained extractor (e.g. a VGG adapter) can be swapped in through this
    interface for full-fidelity perceptual scores.
    """

    def features(self, x: torch.Tensor) -> List[torch.Tensor]: ...


class ToyFeatureExtractor(nn.Module):
    """Three fixed random conv layers; deterministic given its seed and frozen."""

    def __init__(self, seed: int = 0, channels=(8, 16, 24)):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers = []
        in_ch = 3
        for out_ch in channels:
            conv = nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * 0.4)
                conv.bias.copy_(torch.randn(conv.bias.shape, generator=gen) * 0.1)
            layers.append(conv)
            in_ch = out_ch
        self.convs = nn.ModuleList(layers)
        for p in self.parameters():
            p.requires_grad_(False)

    def features(self, x: torch.Tensor) -> List[torch.Tensor]:
        if x.dim() == 3:
            x = x.unsqueeze(0)
        out = []
        f = x
        for conv in self.convs:
            f = F.leaky_relu(conv(f), 0.2)
            out.append(f)
        return out

    def pooled(self, x: torch.Tensor) -> torch.Tensor:
        """Spatially averaged features of every layer, concatenated: [N, sum(C_l)]."""
        return torch.cat([f.mean(dim=(2, 3)) for f in self.features(x)], dim=1)


@dataclass
class PerceptualConfig:
    """Extractor plus optional per-layer channel weights (default: unit weights)."""

    extractor: FeatureExtractor
    layer_weights: Optional[List[torch.Tensor]] = None

    def weight_for(self, layer: int, channels: int, like: torch.Tensor) -> torch.Tensor:
        if self.layer_weights is None:
            return torch.ones(channels, dtype=like.dtype, device=like.device)
        w = self.layer_weights[layer]
        if w.shape[0] != channels:
            raise DimensionError(f"layer {layer} weight has {w.shape[0]} channels, features have {channels}")
        if (w < 0).any():
            raise ConfigError("perceptual layer weights must be >= 0")
        return w.to(like.dtype)


def _batched(x: torch.Tensor) -> torch.Tensor:
    if x.dim() == 3:
        return x.unsqueeze(0)
    if x.dim() != 4:
        raise DimensionError(f"expected [C,H,W] or [N,C,H,W], got {tuple(x.shape)}")
    return x


def _weight_map(weight, like: torch.Tensor) -> torch.Tensor:
    """Coerce a DiscountedMask / [H,W] / [N,1,H,W] weight to broadcast shape."""
    if isinstance(weight, DiscountedMask):
        weight = weight.data
    if weight.dim() == 2:
        weight = weight.view(1, 1, *weight.shape)
    if weight.shape[-2:] != like.shape[-2:]:
        raise DimensionError(
            f"weight map {tuple(weight.shape[-2:])} does not match image {tuple(like.shape[-2:])}"
        )
    return weight.to(like.dtype)


def _same_id_mask(same_id, n: int, like: torch.Tensor) -> torch.Tensor:
    if isinstance(same_id, bool):
        same_id = torch.full((n,), same_id, dtype=torch.bool)
    return same_id.view(n, 1, 1, 1).to(like.device)


# ----------------------------- stage losses -----------------------------

def adv_loss(x: torch.Tensor, x_t: torch.Tensor, fr: FRBackbone) -> torch.Tensor:
    """1 - cosine similarity of the embeddings; in [0, 2], 0 iff embeddings align."""
    e = fr.embed(_batched(x))
    e_t = fr.embed(_batched(x_t))
    cos = F.cosine_similarity(e, e_t, dim=-1).clamp(-1.0, 1.0)
    return (1.0 - cos).mean()


def recovery_loss_stage1(x_syn, x_s, same_id, m_d) -> torch.Tensor:
    """Half squared error; cross-identity pairs are weighted by the discounted mask."""
    x_syn, x_s = _batched(x_syn), _batched(x_s)
    if x_syn.shape != x_s.shape:
        raise DimensionError(f"shapes differ: {tuple(x_syn.shape)} vs {tuple(x_s.shape)}")
    n = x_syn.shape[0]
    w = _weight_map(m_d, x_s)
    ones = torch.ones_like(w)
    weight = torch.where(_same_id_mask(same_id, n, x_s), ones, w)
    residual = (x_syn - x_s) * weight
    return 0.5 * residual.pow(2).flatten(1).sum(dim=1).mean()


def recovery_loss_stage2(x_refine, x_out, x_s, same_id, m_d) -> torch.Tensor:
    """Same-identity pairs reconstruct the source; cross pairs anchor to the
    stage-1 output under the discounted mask."""
    x_refine, x_out, x_s = _batched(x_refine), _batched(x_out), _batched(x_s)
    if not (x_refine.shape == x_out.shape == x_s.shape):
        raise DimensionError("shapes of x_refine / x_out / x_s differ")
    n = x_refine.shape[0]
    w = _weight_map(m_d, x_s)
    same = _same_id_mask(same_id, n, x_s)
    residual = torch.where(same, x_refine - x_s, (x_refine - x_out) * w)
    return 0.5 * residual.pow(2).flatten(1).sum(dim=1).mean()


def lpips(x, y, cfg: PerceptualConfig) -> torch.Tensor:
    """Perceptual distance: mean squared weighted difference of channel-unit
    features, averaged per layer over space and summed across layers."""
    x, y = _batched(x), _batched(y)
    if x.shape != y.shape:
        raise DimensionError(f"shapes differ: {tuple(x.shape)} vs {tuple(y.shape)}")
    feats_x = cfg.extractor.features(x)
    feats_y = cfg.extractor.features(y)
    total = None
    for layer, (fx, fy) in enumerate(zip(feats_x, feats_y)):
        fx = fx / (fx.norm(dim=1, keepdim=True) + _NORM_EPS)
        fy = fy / (fy.norm(dim=1, keepdim=True) + _NORM_EPS)
        w = cfg.weight_for(layer, fx.shape[1], fx).view(1, -1, 1, 1)
        sq = (w * (fx - fy)).pow(2).sum(dim=1)   # [N,H,W]
        term = sq.mean(dim=(1, 2))               # 1/(H_l W_l) sum
        total = term if total is None else total + term
    return total.mean()


def boundary_variance_loss(x_refine, x_s, mask: Union[BinaryMask, Sequence[BinaryMask]]) -> torch.Tensor:
    """Squared jumps across the four patch edges of the composited image.

    Pairs the inclusive boundary rows/columns of the hole with the pixels just
    outside; the rect must sit strictly inside the image.
    """
    x_refine, x_s = _batched(x_refine), _batched(x_s)
    if x_refine.shape != x_s.shape:
        raise DimensionError(f"shapes differ: {tuple(x_refine.shape)} vs {tuple(x_s.shape)}")
    masks = [mask] * x_refine.shape[0] if isinstance(mask, BinaryMask) else list(mask)
    if len(masks) != x_refine.shape[0]:
        raise DimensionError(f"{len(masks)} masks for batch of {x_refine.shape[0]}")
    h, w = x_s.shape[-2:]
    total = x_s.new_zeros(())
    for i, m in enumerate(masks):
        rect = m.rect
        if rect is None:
            continue
        if rect.left < 1 or rect.top < 1 or rect.right > w - 2 or rect.bottom > h - 2:
            raise DomainError(f"rect {rect} touches the image border; boundary pairs undefined")
        x = compose(x_refine[i], x_s[i], m.data)
        l, t, r, b = rect.left, rect.top, rect.right, rect.bottom
        edges = (
            x[:, t:b + 1, l] - x[:, t:b + 1, l - 1],
            x[:, t:b + 1, r] - x[:, t:b + 1, r + 1],
            x[:, t, l:r + 1] - x[:, t - 1, l:r + 1],
            x[:, b, l:r + 1] - x[:, b + 1, l:r + 1],
        )
        total = total + 0.5 * sum(e.pow(2).sum() for e in edges)
    return total / x_refine.shape[0]


# ----------------------------- GAN objectives -----------------------------

def nonsaturating_d_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    return F.softplus(-real_scores).mean() + F.softplus(fake_scores).mean()


def nonsaturating_g_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    """-log sigmoid(D(fake)): the non-saturating generator term."""
    return F.softplus(-fake_scores).mean()


def wasserstein_d_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    return fake_scores.mean() - real_scores.mean()


def wasserstein_g_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    return -fake_scores.mean()


def _per_sample_scores(critic, x: torch.Tensor) -> torch.Tensor:
    scores = critic(x)
    if scores.dim() > 1:
        scores = scores.flatten(1).mean(dim=1)  # patch critics: average the map
    return scores


def gradient_penalty(critic, x_real: torch.Tensor, x_fake: torch.Tensor,
                     generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Unit-gradient penalty on uniform interpolates between real and fake."""
    x_real, x_fake = _batched(x_real), _batched(x_fake)
    if x_real.shape != x_fake.shape:
        raise DimensionError(f"shapes differ: {tuple(x_real.shape)} vs {tuple(x_fake.shape)}")
    n = x_real.shape[0]
    u = torch.rand(n, 1, 1, 1, generator=generator, dtype=x_real.dtype, device=x_real.device)
    with torch.enable_grad():  # the penalty differentiates internally even under no_grad
        x_hat = u * x_real + (1.0 - u) * x_fake
        if not x_hat.requires_grad:
            x_hat.requires_grad_(True)
        scores = _per_sample_scores(critic, x_hat)
        grads = torch.autograd.grad(scores.sum(), x_hat, create_graph=True)[0]
    norms = grads.flatten(1).norm(2, dim=1)
    return (norms - 1.0).pow(2).mean()


def r1_penalty(critic, x_real: torch.Tensor) -> torch.Tensor:
    """E[||grad D(x_real)||^2]; multiply by r1_coeff/2 in the critic objective."""
    with torch.enable_grad():
        x = _batched(x_real).detach().requires_grad_(True)
        scores = _per_sample_scores(critic, x)
        grads = torch.autograd.grad(scores.sum(), x, create_graph=True)[0]
    return grads.flatten(1).pow(2).sum(dim=1).mean()


# ----------------------------- totals -----------------------------

def stage1_total(adv, rec, lpips_term, dis, weights: LossWeights) -> torch.Tensor:
    """Generator objective of stage 1 (dis = non-saturating generator term)."""
    return (weights.lambda_adv * adv + weights.lambda_rec * rec
            + weights.lambda_lpips * lpips_term + weights.lambda_dis * dis)


def stage2_total(adv, rec, bv, dis, lpips_term, weights: LossWeights) -> torch.Tensor:
    """Refiner objective of stage 2 (dis = critic's generator term)."""
    return (weights.lambda_adv * adv + weights.lambda_rec * rec
            + weights.lambda_bv * bv + weights.lambda_dis * dis
            + weights.lambda_lpips * lpips_term)
