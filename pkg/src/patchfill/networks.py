"""Toy-scale network assemblies for the two attack stages.

Pieces:
- ``StyleEncoder``: pyramid feature extractor with per-layer style heads,
- ``MappingNetwork``: identity embedding -> extended latent (one vector per layer),
- ``AttStyleGenerator`` / ``Stage1Model``: attention-guided style generator,
- ``RefinerNet``: U-Net patch refiner with dual spatial attention,
- ``StyleCritic`` / ``PatchCritic``: the two discriminators,
- ``ToyFaceEncoder``: small convolutional face-embedding surrogate implementing
  the pluggable ``FRBackbone`` contract.

FRBackbone adapter contract: any object with ``embed(x) -> [N,d]`` returning
unit-norm rows for [N,3,H,W] input at its native ``resolution``, plus
``differentiable`` (gradients flow through ``embed``) and ``embedding_dim``
attributes, can be attacked or evaluated against. Externally trained backbones
only need a thin wrapper exposing that surface.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Protocol, Sequence, Tuple, runtime_checkable

import torch
import torch.nn as nn
import torch.nn.functional as F

from .aain import AAINLayer
from .errors import ConfigError, DimensionError, DomainError
from .masks import BinaryMask, compose, downsample_mask


# ----------------------------- configuration -----------------------------

@dataclass(frozen=True)
class GeneratorConfig:
    """Shape of the style generator; defaults are the desk-scale 64x64 setup.

    The 256x256 setup uses ``GeneratorConfig(output_resolution=256, num_blocks=7,
    style_dim=512, base_channels=64)`` and yields 14x512 latent embeddings.
    """

    output_resolution: int = 64
    num_blocks: int = 5
    style_dim: int = 128
    base_channels: int = 64
    max_channels: int = 256

    def __post_init__(self):
        res = self.output_resolution
        if res < 8 or res & (res - 1):
            raise ConfigError(f"output resolution must be a power of two >= 8, got {res}")
        expected = int(math.log2(res)) - 1
        if self.num_blocks != expected:
            raise ConfigError(
                f"num_blocks must be log2(resolution)-1 = {expected}, got {self.num_blocks}"
            )
        if self.style_dim <= 0 or self.base_channels <= 0:
            raise ConfigError("style_dim and base_channels must be positive")

    @property
    def num_layers(self) -> int:
        """Style layers in the extended latent: two per generator block."""
        return 2 * self.num_blocks

    @property
    def block_resolutions(self) -> Tuple[int, ...]:
        return tuple(4 * 2**i for i in range(self.num_blocks))

    def channels(self, res: int) -> int:
        return min(self.max_channels, self.base_channels * (self.output_resolution // res))


# ----------------------------- identity backbone -----------------------------

@runtime_checkable
class FRBackbone(Protocol):
    """Pluggable face-embedding model; see the module docstring for the contract."""

    differentiable: bool
    resolution: int
    embedding_dim: int

    def embed(self, x: torch.Tensor) -> torch.Tensor: ...


@dataclass
class IdentityEmbedding:
    """A single identity vector with an explicit normalization flag."""

    data: torch.Tensor
    normalized: bool = False

    def normalize(self) -> "IdentityEmbedding":
        return IdentityEmbedding(F.normalize(self.data, dim=-1), True)

    def validate(self) -> None:
        if self.normalized and abs(self.data.norm().item() - 1.0) > 1e-6:
            raise DomainError("embedding flagged normalized but norm differs from 1")


class ToyFaceEncoder(nn.Module):
    """Four stride-2 conv blocks, global pooling, linear head, L2-normalized."""

    differentiable = True

    def __init__(self, resolution: int = 64, embedding_dim: int = 128, base_channels: int = 32):
        super().__init__()
        self.resolution = resolution
        self.embedding_dim = embedding_dim
        c = base_channels
        self.features = nn.Sequential(
            nn.Conv2d(3, c, 3, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(c, 2 * c, 3, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(2 * c, 4 * c, 3, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(4 * c, 4 * c, 3, stride=2, padding=1), nn.LeakyReLU(0.2),
        )
        self.head = nn.Linear(4 * c, embedding_dim)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.resolution or x.shape[-2] != self.resolution:
            raise DimensionError(
                f"expected {self.resolution}x{self.resolution} input, got {tuple(x.shape[-2:])}"
            )
        f = self.features(x)
        f = f.mean(dim=(2, 3))
        return F.normalize(self.head(f), dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.embed(x)


class CosineMarginHead(nn.Module):
    """Classification head with an additive cosine margin on the true class."""

    def __init__(self, embedding_dim: int, n_classes: int, scale: float = 16.0, margin: float = 0.2):
        super().__init__()
        self.scale = scale
        self.margin = margin
        self.weight = nn.Parameter(torch.randn(n_classes, embedding_dim) * 0.05)

    def forward(self, embeddings: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        cos = embeddings @ F.normalize(self.weight, dim=-1).t()
        onehot = F.one_hot(labels, cos.shape[1]).to(cos.dtype)
        return self.scale * (cos - self.margin * onehot)


# ----------------------------- style encoder -----------------------------

class StyleEncoder(nn.Module):
    """Pyramid feature extractor with one style head per generator layer.

    The stem runs at full resolution; stride-2 stages walk down to 4x4,
    exposing every intermediate map as the source-image feature pyramid. Each
    style layer pools the pyramid level of its generator block and projects it
    to the style dimension.
    """

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        res = config.output_resolution
        self.stem = nn.Sequential(
            nn.Conv2d(3, config.channels(res), 3, padding=1), nn.LeakyReLU(0.2)
        )
        downs = []
        cur = res
        while cur > 4:
            downs.append(nn.Sequential(
                nn.Conv2d(config.channels(cur), config.channels(cur // 2), 3, stride=2, padding=1),
                nn.LeakyReLU(0.2),
            ))
            cur //= 2
        self.downs = nn.ModuleList(downs)
        heads = []
        for layer in range(config.num_layers):
            block_res = config.block_resolutions[layer // 2]
            heads.append(nn.Sequential(
                nn.AdaptiveAvgPool2d(1),
                nn.Flatten(),
                nn.Linear(config.channels(block_res), config.style_dim),
            ))
        self.heads = nn.ModuleList(heads)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, Dict[int, torch.Tensor]]:
        res = self.config.output_resolution
        if x.shape[-2:] != (res, res):
            raise DimensionError(f"expected {res}x{res} input, got {tuple(x.shape[-2:])}")
        pyramid = {}
        f = self.stem(x)
        pyramid[res] = f
        cur = res
        for down in self.downs:
            f = down(f)
            cur //= 2
            pyramid[cur] = f
        styles = []
        for layer, head in enumerate(self.heads):
            block_res = self.config.block_resolutions[layer // 2]
            styles.append(head(pyramid[block_res]))
        w_sty = torch.stack(styles, dim=1)  # [N, L, D]
        return w_sty, pyramid


class MappingNetwork(nn.Module):
    """Identity vector -> extended latent: shared trunk plus per-layer heads."""

    def __init__(self, identity_dim: int, style_dim: int, num_layers: int):
        super().__init__()
        self.identity_dim = identity_dim
        self.num_layers = num_layers
        self.trunk = nn.Sequential(
            nn.Linear(identity_dim, style_dim), nn.LeakyReLU(0.2),
            nn.Linear(style_dim, style_dim), nn.LeakyReLU(0.2),
        )
        self.heads = nn.ModuleList(nn.Linear(style_dim, style_dim) for _ in range(num_layers))

    def forward(self, z_id: torch.Tensor) -> torch.Tensor:
        if z_id.dim() == 1:
            z_id = z_id.unsqueeze(0)
        norms = z_id.norm(dim=-1)
        if (norms - 1.0).abs().max() > 1e-6:
            warnings.warn("identity embedding is not unit-norm; normalizing", RuntimeWarning)
            z_id = F.normalize(z_id, dim=-1)
        h = self.trunk(z_id)
        return torch.stack([head(h) for head in self.heads], dim=1)  # [N, L, D]


# ----------------------------- generator -----------------------------

class GeneratorBlock(nn.Module):
    """conv -> act -> AAIN, twice; doubles resolution except for the first block."""

    def __init__(self, in_ch: int, out_ch: int, style_dim: int, fp_ch: int, upsample: bool):
        super().__init__()
        self.upsample = upsample
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.aain1 = AAINLayer(out_ch, style_dim, fp_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.aain2 = AAINLayer(out_ch, style_dim, fp_ch)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, f, f_p, w_sty, w_id, mask):
        if self.upsample:
            f = F.interpolate(f, scale_factor=2, mode="nearest")
        f = self.act(self.conv1(f))
        f = self.aain1(f, f_p, w_sty[:, 0], w_id[:, 0], mask)
        f = self.act(self.conv2(f))
        f = self.aain2(f, f_p, w_sty[:, 1], w_id[:, 1], mask)
        return f


class AttStyleGenerator(nn.Module):
    """Style generator over a learned constant, modulated by AAIN at every block."""

    def __init__(self, config: GeneratorConfig, pyramid_channels: Dict[int, int]):
        super().__init__()
        self.config = config
        self.const = nn.Parameter(torch.randn(1, config.channels(4), 4, 4))
        blocks = []
        for i, res in enumerate(config.block_resolutions):
            in_ch = config.channels(4) if i == 0 else config.channels(res // 2)
            blocks.append(GeneratorBlock(
                in_ch, config.channels(res), config.style_dim,
                pyramid_channels[res], upsample=(i > 0),
            ))
        self.blocks = nn.ModuleList(blocks)
        self.to_rgb = nn.Conv2d(config.channels(config.output_resolution), 3, 1)

    def forward(self, w_sty, w_id, pyramid, masks_by_res) -> torch.Tensor:
        n = w_sty.shape[0]
        f = self.const.expand(n, -1, -1, -1)
        for i, (res, block) in enumerate(zip(self.config.block_resolutions, self.blocks)):
            f = block(f, pyramid[res], w_sty[:, 2 * i:2 * i + 2], w_id[:, 2 * i:2 * i + 2],
                      masks_by_res[res])
        return torch.tanh(self.to_rgb(f))


def stack_masks(masks: Sequence[BinaryMask], resolutions) -> Dict[int, torch.Tensor]:
    """Per-resolution [N,1,r,r] stacks of the (per-sample) downsampled masks."""
    out = {}
    for res in resolutions:
        out[res] = torch.stack(
            [downsample_mask(m, res, res).data for m in masks]
        ).unsqueeze(1)
    return out


class Stage1Model(nn.Module):
    """Encoder + mapping network + generator, wired for end-to-end patch synthesis."""

    def __init__(self, config: GeneratorConfig, identity_dim: int = 128):
        super().__init__()
        self.config = config
        self.identity_dim = identity_dim
        self.encoder = StyleEncoder(config)
        self.mapper = MappingNetwork(identity_dim, config.style_dim, config.num_layers)
        pyramid_channels = {res: config.channels(res) for res in config.block_resolutions}
        self.generator = AttStyleGenerator(config, pyramid_channels)

    def generate(
        self,
        x_s: torch.Tensor,
        x_t: torch.Tensor,
        masks: Sequence[BinaryMask],
        fr: FRBackbone,
        id_encoder: Optional[FRBackbone] = None,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """Synthesize patches for a batch; returns (x_syn, x_out), both [N,3,H,W].

        ``id_encoder`` defaults to the attacked backbone ``fr``; pass a different
        one to decouple the identity-feature source from the attack target.
        """
        if x_s.shape != x_t.shape:
            raise DimensionError(f"source/target shapes differ: {tuple(x_s.shape)} vs {tuple(x_t.shape)}")
        if len(masks) != x_s.shape[0]:
            raise DimensionError(f"{len(masks)} masks for batch of {x_s.shape[0]}")
        encoder = id_encoder if id_encoder is not None else fr
        if encoder.embedding_dim != self.identity_dim:
            raise DimensionError(
                f"identity encoder emits {encoder.embedding_dim}-d vectors, "
                f"model expects {self.identity_dim}"
            )
        w_sty, pyramid = self.encoder(x_s)
        with torch.no_grad():
            z_id = encoder.embed(x_t)
        w_id = self.mapper(z_id)
        masks_by_res = stack_masks(masks, self.config.block_resolutions)
        x_syn = self.generator(w_sty, w_id, pyramid, masks_by_res)
        full = self.config.output_resolution
        x_out = compose(x_syn, x_s, masks_by_res[full])
        return x_syn, x_out

    def generate_single(self, x_s, x_t, mask: BinaryMask, fr: FRBackbone,
                        id_encoder: Optional[FRBackbone] = None):
        """Single-image convenience wrapper around :meth:`generate`."""
        x_syn, x_out = self.generate(
            x_s.data.unsqueeze(0), x_t.data.unsqueeze(0), [mask], fr, id_encoder
        )
        return x_syn[0], x_out[0]


# ----------------------------- refinement stage -----------------------------

class DualSpatialAttention(nn.Module):
    """Two attention passes over flattened positions, touching only hole pixels.

    (a) hole queries attend over background keys/values, (b) holes self-attend;
    both use 1x1 projections with a residual add. Background positions pass
    through bit-identically.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.cross_q = nn.Conv2d(channels, channels, 1)
        self.cross_k = nn.Conv2d(channels, channels, 1)
        self.cross_v = nn.Conv2d(channels, channels, 1)
        self.cross_out = nn.Conv2d(channels, channels, 1)
        self.self_q = nn.Conv2d(channels, channels, 1)
        self.self_k = nn.Conv2d(channels, channels, 1)
        self.self_v = nn.Conv2d(channels, channels, 1)
        self.self_out = nn.Conv2d(channels, channels, 1)

    @staticmethod
    def _attend(q, k, v):
        attn = torch.softmax(q @ k.t() / math.sqrt(q.shape[-1]), dim=-1)
        return attn @ v

    def _proj_flat(self, conv, f):
        # [N,C,H,W] -> [N, P, C] through a 1x1 conv
        return conv(f).flatten(2).transpose(1, 2)

    def forward(self, f: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        n, c, h, w = f.shape
        if mask.dim() == 2:
            mask = mask.expand(n, 1, h, w) if mask.shape == (h, w) else mask
        if mask.shape[-2:] != (h, w):
            raise DimensionError(f"mask {tuple(mask.shape[-2:])} vs features {h}x{w}")
        flat = f.flatten(2).transpose(1, 2)  # [N, P, C]
        hole_sets = [(mask[i, 0] if mask.dim() == 4 else mask).reshape(-1) == 0 for i in range(n)]

        cq = self._proj_flat(self.cross_q, f)
        ck = self._proj_flat(self.cross_k, f)
        cv = self._proj_flat(self.cross_v, f)
        w_co = self.cross_out.weight.view(c, c)
        b_co = self.cross_out.bias

        crossed = []
        for i in range(n):
            hole = hole_sets[i]
            if not bool(hole.any()):
                crossed.append(flat[i])
                continue
            bg = ~hole
            if not bool(bg.any()):
                raise DomainError("dual spatial attention needs at least one background position")
            delta = torch.zeros_like(flat[i])
            mixed = self._attend(cq[i][hole], ck[i][bg], cv[i][bg])
            delta[hole] = mixed @ w_co.t() + b_co
            crossed.append(flat[i] + delta)
        f1 = torch.stack(crossed).transpose(1, 2).reshape(n, c, h, w)

        sq = self._proj_flat(self.self_q, f1)
        sk = self._proj_flat(self.self_k, f1)
        sv = self._proj_flat(self.self_v, f1)
        w_so = self.self_out.weight.view(c, c)
        b_so = self.self_out.bias
        flat1 = f1.flatten(2).transpose(1, 2)

        refined = []
        for i in range(n):
            hole = hole_sets[i]
            if not bool(hole.any()):
                refined.append(flat1[i])
                continue
            delta = torch.zeros_like(flat1[i])
            mixed = self._attend(sq[i][hole], sk[i][hole], sv[i][hole])
            delta[hole] = mixed @ w_so.t() + b_so
            refined.append(flat1[i] + delta)
        return torch.stack(refined).transpose(1, 2).reshape(n, c, h, w)


class RefinerNet(nn.Module):
    """U-Net over (stage-1 composite, source, mask) with attention at the two
    coarsest encoder scales; output re-composited so the background is exact."""

    def __init__(self, resolution: int = 64, base_channels: int = 32):
        super().__init__()
        if resolution < 16 or resolution & (resolution - 1):
            raise ConfigError(f"refiner resolution must be a power of two >= 16, got {resolution}")
        self.resolution = resolution
        c = base_channels
        act = nn.LeakyReLU(0.2)
        self.enc0 = nn.Sequential(nn.Conv2d(7, c, 3, padding=1), act)                 # res
        self.enc1 = nn.Sequential(nn.Conv2d(c, 2 * c, 3, stride=2, padding=1), act)   # res/2
        self.enc2 = nn.Sequential(nn.Conv2d(2 * c, 4 * c, 3, stride=2, padding=1), act)  # res/4
        self.enc3 = nn.Sequential(nn.Conv2d(4 * c, 4 * c, 3, stride=2, padding=1), act)  # res/8
        self.attn_mid = DualSpatialAttention(4 * c)     # at res/4
        self.attn_coarse = DualSpatialAttention(4 * c)  # at res/8
        self.dec2 = nn.Sequential(nn.Conv2d(8 * c, 2 * c, 3, padding=1), act)
        self.dec1 = nn.Sequential(nn.Conv2d(4 * c, c, 3, padding=1), act)
        self.dec0 = nn.Sequential(nn.Conv2d(2 * c, c, 3, padding=1), act)
        self.to_rgb = nn.Conv2d(c, 3, 3, padding=1)

    def forward(self, x_out: torch.Tensor, x_s: torch.Tensor,
                masks: Sequence[BinaryMask]) -> torch.Tensor:
        if x_out.shape != x_s.shape:
            raise DimensionError(f"shapes differ: {tuple(x_out.shape)} vs {tuple(x_s.shape)}")
        res = self.resolution
        if x_out.shape[-2:] != (res, res):
            raise DimensionError(f"expected {res}x{res} input, got {tuple(x_out.shape[-2:])}")
        m = stack_masks(masks, [res, res // 4, res // 8])
        x = torch.cat([x_out, x_s, m[res]], dim=1)
        e0 = self.enc0(x)
        e1 = self.enc1(e0)
        e2 = self.enc2(e1)
        e3 = self.enc3(e2)
        e3 = self.attn_coarse(e3, m[res // 8])
        e2 = self.attn_mid(e2, m[res // 4])
        up = lambda t: F.interpolate(t, scale_factor=2, mode="nearest")
        d2 = self.dec2(torch.cat([up(e3), e2], dim=1))
        d1 = self.dec1(torch.cat([up(d2), e1], dim=1))
        d0 = self.dec0(torch.cat([up(d1), e0], dim=1))
        raw = torch.tanh(self.to_rgb(d0))
        return compose(raw, x_s, m[res])

    def refine_single(self, x_out, x_s, mask: BinaryMask):
        return self.forward(x_out.unsqueeze(0), x_s.unsqueeze(0), [mask])[0]


# ----------------------------- discriminators -----------------------------

class StyleCritic(nn.Module):
    """Scalar convolutional critic for the stage-1 generator.

    Layer table (resolution 64, base 32):

        conv3x3 s1   3 ->  32   @64
        conv3x3 s2  32 ->  64   @32
        conv3x3 s2  64 -> 128   @16
        conv3x3 s2 128 -> 256   @8
        conv3x3 s2 256 -> 256   @4
        flatten, linear 256*16 -> 1
    """

    def __init__(self, resolution: int = 64, base_channels: int = 32, max_channels: int = 256):
        super().__init__()
        self.resolution = resolution
        layers = [nn.Conv2d(3, base_channels, 3, padding=1), nn.LeakyReLU(0.2)]
        cur_res, cur_ch = resolution, base_channels
        while cur_res > 4:
            nxt = min(max_channels, cur_ch * 2)
            layers += [nn.Conv2d(cur_ch, nxt, 3, stride=2, padding=1), nn.LeakyReLU(0.2)]
            cur_ch, cur_res = nxt, cur_res // 2
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(cur_ch * 16, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-2:] != (self.resolution, self.resolution):
            raise DimensionError(
                f"expected {self.resolution}x{self.resolution} input, got {tuple(x.shape[-2:])}"
            )
        f = self.features(x)
        return self.head(f.flatten(1)).squeeze(1)  # [N]


class PatchCritic(nn.Module):
    """Fully convolutional critic scoring one square patch per output cell.

    Layer table (any input resolution; 64 -> 8x8 score map):

        layer         kernel stride  out@64   rf   jump
        conv1 + lrelu   4x4    2     c @32     4     2
        conv2 + lrelu   4x4    2    2c @16    10     4
        conv3 + lrelu   4x4    2    4c @8     22     8
        conv4 (1 ch)    3x3    1     1 @8     38     8

    Each score cell therefore judges a 38x38 receptive field, stepping 8 pixels
    per cell.
    """

    receptive_field = 38
    cell_stride = 8

    def __init__(self, base_channels: int = 32):
        super().__init__()
        c = base_channels
        self.net = nn.Sequential(
            nn.Conv2d(3, c, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(c, 2 * c, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(2 * c, 4 * c, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(4 * c, 1, 3, padding=1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] < 8 or x.shape[-2] < 8:
            raise DimensionError(f"input too small for patch scoring: {tuple(x.shape)}")
        return self.net(x).squeeze(1)  # [N, h/8, w/8]
