"""Synthetic identity dataset, ingestion and image I/O.

The synthetic renderer stands in for real face datasets at desk scale: every
identity is a fixed geometric/colour signature (head shape, eye layout, mouth,
marker dots); per-image variation adds pose/hue/background jitter and pixel
noise. Everything derives from one seed, so generated trees are byte-identical
across runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, DataError


@dataclass
class DatasetManifest:
    """Resolved dataset layout: identities with their (sorted) image paths."""

    root: Path
    resolution: int
    identities: List[Tuple[str, List[Path]]]

    @property
    def n_identities(self) -> int:
        return len(self.identities)

    @property
    def n_images(self) -> int:
        return sum(len(paths) for _, paths in self.identities)

    def labels(self) -> List[str]:
        return [label for label, _ in self.identities]

    def flat(self) -> List[Tuple[int, Path]]:
        """(identity index, path) for every image, manifest order."""
        out = []
        for idx, (_, paths) in enumerate(self.identities):
            out.extend((idx, p) for p in paths)
        return out


def load_image(path, resolution=None) -> torch.Tensor:
    """Decode a PNG to a [3,H,W] float tensor in [-1,1]."""
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    except (OSError, UnidentifiedImageError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    if resolution is not None and arr.shape[:2] != (resolution, resolution):
        raise DataError(f"{path}: expected {resolution}x{resolution}, got {arr.shape[1]}x{arr.shape[0]}")
    unit = arr / 255.0
    return torch.from_numpy(unit.transpose(2, 0, 1).copy()) * 2.0 - 1.0


def save_image(tensor: torch.Tensor, path) -> None:
    """Write a [3,H,W] tensor in [-1,1] as an 8-bit PNG (lossless)."""
    unit = ((tensor.detach().clamp(-1.0, 1.0) + 1.0) * 0.5).cpu().numpy()
    u8 = np.round(unit * 255.0).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(u8).save(path)


def load_batch(paths: Sequence, resolution=None) -> torch.Tensor:
    return torch.stack([load_image(p, resolution) for p in paths])


# ----------------------------- synthetic renderer -----------------------------

def _identity_signature(rng: np.random.Generator) -> Dict:
    """Fixed per-identity appearance parameters."""
    return {
        "bg": rng.uniform(0.05, 0.45, 3),
        "skin": rng.uniform(0.35, 0.95, 3),
        "head_rx": rng.uniform(0.26, 0.38),
        "head_ry": rng.uniform(0.32, 0.45),
        "eye_dx": rng.uniform(0.10, 0.18),
        "eye_y": rng.uniform(-0.16, -0.06),
        "eye_r": rng.uniform(0.028, 0.055),
        "eye_color": rng.uniform(0.0, 0.35, 3),
        "mouth_w": rng.uniform(0.08, 0.18),
        "mouth_y": rng.uniform(0.12, 0.22),
        "mouth_h": rng.uniform(0.02, 0.05),
        "mouth_color": rng.uniform(0.0, 0.6, 3),
        "marks": rng.uniform(-0.30, 0.30, (3, 2)),
        "mark_r": rng.uniform(0.03, 0.06),
        "mark_color": rng.uniform(0.0, 1.0, 3),
    }


def _render(sig: Dict, resolution: int, rng: np.random.Generator) -> np.ndarray:
    """One [H,W,3] float image in [0,1] for an identity, with per-image jitter."""
    shift = rng.uniform(-0.05, 0.05, 2)          # pose: head translation
    scale = rng.uniform(0.92, 1.08)              # pose: head scale
    brightness = rng.uniform(0.9, 1.1)
    hue = rng.uniform(-0.04, 0.04, 3)
    bg_jitter = rng.uniform(-0.05, 0.05, 3)

    ys, xs = np.mgrid[0:resolution, 0:resolution]
    u = (xs + 0.5) / resolution - 0.5 - shift[0]  # [-0.5, 0.5] head-centred coords
    v = (ys + 0.5) / resolution - 0.5 - shift[1]
    u, v = u / scale, v / scale

    img = np.empty((resolution, resolution, 3))
    img[:] = np.clip(sig["bg"] + bg_jitter, 0.0, 1.0)

    def paint(mask, color):
        img[mask] = color

    head = (u / sig["head_rx"]) ** 2 + (v / sig["head_ry"]) ** 2 <= 1.0
    paint(head, sig["skin"])
    for side in (-1.0, 1.0):
        eye = (u - side * sig["eye_dx"]) ** 2 + (v - sig["eye_y"]) ** 2 <= sig["eye_r"] ** 2
        paint(eye, sig["eye_color"])
    mouth = (np.abs(u) <= sig["mouth_w"]) & (np.abs(v - sig["mouth_y"]) <= sig["mouth_h"])
    paint(mouth, sig["mouth_color"])
    for mx, my in sig["marks"]:
        mark = (u - mx) ** 2 + (v - my) ** 2 <= sig["mark_r"] ** 2
        paint(mark, sig["mark_color"])

    img = np.clip(img * brightness + hue, 0.0, 1.0)
    img = np.clip(img + rng.normal(0.0, 0.01, img.shape), 0.0, 1.0)
    return img


def gen_synthetic_dataset(root, n_identities: int, per_identity: int,
                          resolution: int = 64, seed: int = 0) -> DatasetManifest:
    """Render a deterministic identity dataset under root/<label>/<image>.png."""
    if n_identities < 2:
        raise ConfigError(f"need at least 2 identities, got {n_identities}")
    if per_identity < 1:
        raise ConfigError(f"need at least 1 image per identity, got {per_identity}")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    ss = np.random.SeedSequence([seed, n_identities, per_identity, resolution])
    identity_seeds = ss.spawn(n_identities)
    identities = []
    for idx in range(n_identities):
        label = f"id_{idx:03d}"
        folder = root / label
        folder.mkdir(exist_ok=True)
        id_ss = identity_seeds[idx]
        sig = _identity_signature(np.random.Generator(np.random.PCG64(id_ss)))
        image_seeds = id_ss.spawn(per_identity)
        paths = []
        for j in range(per_identity):
            img = _render(sig, resolution, np.random.Generator(np.random.PCG64(image_seeds[j])))
            u8 = np.round(img * 255.0).astype(np.uint8)
            path = folder / f"img_{j:03d}.png"
            Image.fromarray(u8).save(path)
            paths.append(path)
        identities.append((label, paths))
    return DatasetManifest(root=root, resolution=resolution, identities=identities)


def ingest_dataset(root) -> DatasetManifest:
    """Read a root/<identity>/<image>.png tree; lexicographic, fully validated."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    folders = sorted(p for p in root.iterdir() if p.is_dir())
    if not folders:
        raise DataError(f"dataset root {root} contains no identity folders")
    identities = []
    resolution = None
    offenders = []
    for folder in folders:
        paths = sorted(p for p in folder.iterdir() if p.suffix.lower() == ".png")
        if not paths:
            raise DataError(f"identity folder {folder} has no images")
        for p in paths:
            try:
                with Image.open(p) as img:
                    w, h = img.size
            except (OSError, UnidentifiedImageError) as exc:
                raise DataError(f"cannot decode image {p}: {exc}") from exc
            if w != h:
                offenders.append(f"{p} ({w}x{h}, not square)")
            elif resolution is None:
                resolution = w
            elif w != resolution:
                offenders.append(f"{p} ({w}x{h}, expected {resolution}x{resolution})")
        identities.append((folder.name, paths))
    if offenders:
        raise DataError("mixed or invalid resolutions: " + "; ".join(offenders))
    return DatasetManifest(root=root, resolution=resolution, identities=identities)


def verification_pairs(manifest: DatasetManifest, n_genuine: int, n_impostor: int,
                       rng: np.random.Generator) -> List[Tuple[Path, Path, bool]]:
    """Random (path_a, path_b, same_identity) pairs for threshold calibration."""
    multi = [i for i, (_, paths) in enumerate(manifest.identities) if len(paths) >= 2]
    if not multi:
        raise DataError("genuine pairs need an identity with at least 2 images")
    if manifest.n_identities < 2:
        raise DataError("impostor pairs need at least 2 identities")
    out = []
    for _ in range(n_genuine):
        idx = multi[rng.integers(len(multi))]
        paths = manifest.identities[idx][1]
        a, b = rng.choice(len(paths), size=2, replace=False)
        out.append((paths[a], paths[b], True))
    for _ in range(n_impostor):
        i, j = rng.choice(manifest.n_identities, size=2, replace=False)
        pa = manifest.identities[i][1]
        pb = manifest.identities[j][1]
        out.append((pa[rng.integers(len(pa))], pb[rng.integers(len(pb))], False))
    return out
