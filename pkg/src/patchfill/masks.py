"""Image/mask data model: patch rectangles, composition and discounted masks.

Conventions:
- images are torch float tensors, channels-first ([C,H,W]; [N,C,H,W] in batched
  helpers), with a declared value range: "unit" ([0,1], the file I/O boundary)
  or "symmetric" ([-1,1], used inside the generators),
- binary masks are [H,W] float tensors over {0,1} with the hole at 0 and the
  background at 1,
- rect coordinates are inclusive pixel indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import torch

from .errors import ConfigError, DimensionError, DomainError

RANGE_UNIT = "unit"            # [0, 1]
RANGE_SYMMETRIC = "symmetric"  # [-1, 1]

_RANGE_BOUNDS = {RANGE_UNIT: (0.0, 1.0), RANGE_SYMMETRIC: (-1.0, 1.0)}

# Reference patch-size bound: 50x100 pixels at 256x256, scaled by image area.
_REF_PATCH_AREA = 50 * 100
_REF_RESOLUTION = 256

DEFAULT_DISCOUNT_ALPHA = 0.15


def max_patch_area(height: int, width: int) -> int:
    """Largest allowed patch area for an image, proportional to 50*100 at 256^2."""
    return max(1, int(_REF_PATCH_AREA * (height * width) / (_REF_RESOLUTION**2)))


@dataclass(frozen=True)
class PatchRect:
    """Axis-aligned patch rectangle, inclusive pixel coordinates."""

    left: int
    top: int
    right: int
    bottom: int

    def __post_init__(self):
        if not (0 <= self.left <= self.right and 0 <= self.top <= self.bottom):
            raise DomainError(
                f"invalid rect (l={self.left}, t={self.top}, r={self.right}, b={self.bottom}): "
                "need 0 <= left <= right and 0 <= top <= bottom"
            )

    @property
    def width(self) -> int:
        return self.right - self.left + 1

    @property
    def height(self) -> int:
        return self.bottom - self.top + 1

    @property
    def area(self) -> int:
        return self.width * self.height

    def contains(self, row: int, col: int) -> bool:
        return self.top <= row <= self.bottom and self.left <= col <= self.right

    def validate_within(self, height: int, width: int) -> None:
        if self.right >= width or self.bottom >= height:
            raise DomainError(
                f"rect {self} does not fit inside a {height}x{width} image"
            )

    def exceeds_area_bound(self, height: int, width: int) -> bool:
        return self.area > max_patch_area(height, width)

    def shifted(self, drow: int, dcol: int) -> "PatchRect":
        return PatchRect(self.left + dcol, self.top + drow,
                         self.right + dcol, self.bottom + drow)


@dataclass
class ImageTensor:
    """A single image: [C,H,W] float tensor plus its declared value range."""

    data: torch.Tensor
    range_tag: str = RANGE_SYMMETRIC

    def __post_init__(self):
        if self.data.dim() != 3:
            raise DimensionError(f"image tensor must be [C,H,W], got {tuple(self.data.shape)}")
        if self.range_tag not in _RANGE_BOUNDS:
            raise ConfigError(f"unknown range tag {self.range_tag!r}")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def validate(self) -> None:
        if not torch.isfinite(self.data).all():
            raise DomainError("image contains non-finite values")
        lo, hi = _RANGE_BOUNDS[self.range_tag]
        if self.data.min() < lo or self.data.max() > hi:
            raise DomainError(
                f"image values outside declared {self.range_tag} range [{lo}, {hi}]"
            )

    def to_symmetric(self) -> "ImageTensor":
        if self.range_tag == RANGE_SYMMETRIC:
            return self
        return ImageTensor(self.data * 2.0 - 1.0, RANGE_SYMMETRIC)

    def to_unit(self) -> "ImageTensor":
        if self.range_tag == RANGE_UNIT:
            return self
        return ImageTensor((self.data + 1.0) * 0.5, RANGE_UNIT)

    @classmethod
    def from_unit_array(cls, arr: np.ndarray) -> "ImageTensor":
        """Build from an [H,W,C] float array in [0,1] (PNG decode convention)."""
        if arr.ndim != 3:
            raise DimensionError(f"expected [H,W,C] array, got shape {arr.shape}")
        data = torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))).float()
        return cls(data, RANGE_UNIT)

    def to_unit_array(self) -> np.ndarray:
        """Return an [H,W,C] float64 array in [0,1]."""
        unit = self.to_unit()
        return unit.data.detach().cpu().numpy().transpose(1, 2, 0).astype(np.float64)


@dataclass
class BinaryMask:
    """Hole-vs-background indicator: 0 exactly on the rect interior, 1 elsewhere.

    ``rect=None`` denotes the degenerate no-hole mask (all ones), used by the
    identity cases of composition and the attention layers.
    """

    data: torch.Tensor
    rect: Optional[PatchRect]

    def __post_init__(self):
        if self.data.dim() != 2:
            raise DimensionError(f"mask must be [H,W], got {tuple(self.data.shape)}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @classmethod
    def from_rect(cls, height: int, width: int, rect: Optional[PatchRect]) -> "BinaryMask":
        data = torch.ones(height, width)
        if rect is not None:
            rect.validate_within(height, width)
            data[rect.top:rect.bottom + 1, rect.left:rect.right + 1] = 0.0
        return cls(data, rect)

    @classmethod
    def full_background(cls, height: int, width: int) -> "BinaryMask":
        return cls.from_rect(height, width, None)

    def validate(self) -> None:
        expected = BinaryMask.from_rect(self.height, self.width, self.rect).data
        if not torch.equal(self.data, expected):
            raise DomainError("mask data does not match its rect")


@dataclass
class DiscountedMask:
    """Reconstruction weight map: 1 on background, 1/(alpha*e^l) inside the hole."""

    data: torch.Tensor
    alpha: float = DEFAULT_DISCOUNT_ALPHA

    def __post_init__(self):
        if self.data.dim() != 2:
            raise DimensionError(f"mask must be [H,W], got {tuple(self.data.shape)}")


def compose(x_syn: torch.Tensor, x_s: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Raw composition kernel: x_syn*(1-M) + x_s*M, M broadcast over channels.

    Accepts [C,H,W] or [N,C,H,W] images with an [H,W] or [N,1,H,W] mask.
    Background pixels come out bit-identical to ``x_s``.
    """
    if x_syn.shape != x_s.shape:
        raise DimensionError(
            f"image shapes differ: {tuple(x_syn.shape)} vs {tuple(x_s.shape)}"
        )
    if mask.shape[-2:] != x_s.shape[-2:]:
        raise DimensionError(
            f"mask {tuple(mask.shape)} does not match image spatial dims {tuple(x_s.shape[-2:])}"
        )
    return x_syn * (1.0 - mask) + x_s * mask


def compose_output(x_syn: ImageTensor, x_s: ImageTensor, mask: BinaryMask) -> ImageTensor:
    """Paste the synthesized hole content into the source image."""
    if x_syn.range_tag != x_s.range_tag:
        raise DimensionError(
            f"range tags differ: {x_syn.range_tag} vs {x_s.range_tag}"
        )
    data = compose(x_syn.data, x_s.data, mask.data)
    return ImageTensor(data, x_s.range_tag)


def boundary_distance(rect: PatchRect, pixel: Tuple[int, int]) -> int:
    """Distance (pixels) from a hole pixel to the nearest rect edge; 0 on the rim."""
    row, col = pixel
    if not rect.contains(row, col):
        raise DomainError(f"pixel {pixel} lies outside rect {rect}")
    return min(row - rect.top, rect.bottom - row, col - rect.left, rect.right - col)


def _hole_distance_field(rect: PatchRect) -> torch.Tensor:
    """[h,w] tensor of boundary distances for every pixel inside the rect."""
    rows = torch.arange(rect.top, rect.bottom + 1).view(-1, 1)
    cols = torch.arange(rect.left, rect.right + 1).view(1, -1)
    d = torch.minimum(
        torch.minimum(rows - rect.top, rect.bottom - rows),
        torch.minimum(cols - rect.left, rect.right - cols),
    )
    return d.float()


def make_discounted_mask(mask: BinaryMask, alpha: float = DEFAULT_DISCOUNT_ALPHA) -> DiscountedMask:
    """Weight map that pins hole pixels near the boundary to the source image.

    Background stays at 1; a hole pixel at boundary distance l gets 1/(alpha*e^l),
    which decays strictly with depth into the hole.
    """
    if alpha <= 0:
        raise ConfigError(f"alpha must be > 0, got {alpha}")
    data = torch.ones(mask.height, mask.width, dtype=torch.float64)
    rect = mask.rect
    if rect is not None:
        l = _hole_distance_field(rect).double()
        data[rect.top:rect.bottom + 1, rect.left:rect.right + 1] = 1.0 / (alpha * torch.exp(l))
    return DiscountedMask(data, alpha)


def downsample_mask(mask: BinaryMask, target_h: int, target_w: int) -> BinaryMask:
    """Block-reduce a mask: a target pixel is hole iff its source block touches the hole.

    Target dims must divide the source dims; for rectangular holes the result is
    again a rectangular hole with the induced (floor-divided) rect.
    """
    if target_h <= 0 or target_w <= 0 or mask.height % target_h or mask.width % target_w:
        raise DimensionError(
            f"target {target_h}x{target_w} does not divide mask {mask.height}x{mask.width}"
        )
    fy = mask.height // target_h
    fx = mask.width // target_w
    rect = mask.rect
    if rect is None:
        return BinaryMask.full_background(target_h, target_w)
    induced = PatchRect(rect.left // fx, rect.top // fy, rect.right // fx, rect.bottom // fy)
    return BinaryMask.from_rect(target_h, target_w, induced)


def mask_pyramid(mask: BinaryMask, resolutions) -> dict:
    """Downsampled copies of ``mask`` keyed by square resolution."""
    out = {}
    for res in resolutions:
        out[res] = downsample_mask(mask, res, res)
    return out
