"""Two-stage training orchestration, pair sampling and checkpointing.

Determinism contract: a run is fully determined by (config, seed). Pair
sampling draws from a numpy generator, everything torch-side (init, penalty
interpolates) from the global torch RNG seeded at run start; both states are
captured in checkpoints, so a resumed run reproduces the uninterrupted one
step for step.

Checkpoint format: the header line ``patchfill-checkpoint v1\\n`` followed by a
pickled tree {kind, step, config, modules, optimizers, rng}; every tensor is
stored as a dtype-tagged contiguous numpy array, making save -> load -> save
byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import pickle
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch

from . import losses as L
from .config import RunConfig, TrainConfig
from .data import DatasetManifest, load_image
from .errors import CheckpointError, DataError, StateError
from .losses import PerceptualConfig, ToyFeatureExtractor
from .masks import BinaryMask, PatchRect, make_discounted_mask
from .networks import (
    CosineMarginHead,
    FRBackbone,
    PatchCritic,
    RefinerNet,
    Stage1Model,
    StyleCritic,
    ToyFaceEncoder,
)

CHECKPOINT_HEADER = b"patchfill-checkpoint v1\n"


# ----------------------------- pair sampling -----------------------------

@dataclass
class PairSample:
    x_s: torch.Tensor
    x_t: torch.Tensor
    same_identity: bool
    rect: PatchRect


@dataclass
class PairBatch:
    x_s: torch.Tensor                 # [N,3,H,W]
    x_t: torch.Tensor
    same: torch.Tensor                # [N] bool
    masks: List[BinaryMask]
    discounted: torch.Tensor          # [N,1,H,W]


def rect_size_bounds(resolution: int) -> Tuple[int, int]:
    """Max patch height/width: the 50x100-at-256 bound scaled to the resolution."""
    return (max(1, round(50 * resolution / 256)), max(1, round(100 * resolution / 256)))


def sample_rect(resolution: int, rng: np.random.Generator,
                min_scale: float = 0.5, max_scale: float = 1.0) -> PatchRect:
    """Uniform rect within the size bounds, kept strictly off the image border
    (the boundary-variance pairs need one pixel of background on every side)."""
    h_max, w_max = rect_size_bounds(resolution)
    h_lo = max(1, round(h_max * min_scale))
    w_lo = max(1, round(w_max * min_scale))
    h = int(rng.integers(h_lo, max(h_lo, round(h_max * max_scale)) + 1))
    w = int(rng.integers(w_lo, max(w_lo, round(w_max * max_scale)) + 1))
    h = min(h, resolution - 2)
    w = min(w, resolution - 2)
    top = int(rng.integers(1, resolution - h))
    left = int(rng.integers(1, resolution - w))
    return PatchRect(left, top, left + w - 1, top + h - 1)


class PairSampler:
    """Deterministic stream of training pairs with per-pair patch rects."""

    def __init__(self, manifest: DatasetManifest, cfg: TrainConfig,
                 rng: np.random.Generator, rect_min_scale: float = 0.5,
                 rect_max_scale: float = 1.0, discount_alpha: float = 0.15):
        if manifest.n_identities < 2:
            raise DataError("pair sampling needs at least 2 identities")
        self.cfg = cfg
        self.rng = rng
        self.resolution = manifest.resolution
        self.rect_scales = (rect_min_scale, rect_max_scale)
        self.discount_alpha = discount_alpha
        # desk scale: keep the whole dataset in memory
        self.images = [[load_image(p, manifest.resolution) for p in paths]
                       for _, paths in manifest.identities]

    def sample(self) -> PairSample:
        rng = self.rng
        same = bool(rng.random() < self.cfg.same_id_fraction)
        n_id = len(self.images)
        if same:
            idx = int(rng.integers(n_id))
            imgs = self.images[idx]
            if len(imgs) >= 2:
                a, b = rng.choice(len(imgs), size=2, replace=False)
            else:
                a = b = 0
            x_s, x_t = imgs[int(a)], imgs[int(b)]
        else:
            i, j = rng.choice(n_id, size=2, replace=False)
            x_s = self.images[int(i)][int(rng.integers(len(self.images[int(i)])))]
            x_t = self.images[int(j)][int(rng.integers(len(self.images[int(j)])))]
        rect = sample_rect(self.resolution, rng, *self.rect_scales)
        return PairSample(x_s=x_s, x_t=x_t, same_identity=same, rect=rect)

    def stream(self) -> Iterator[PairSample]:
        while True:
            yield self.sample()

    def batch(self, size: int) -> PairBatch:
        samples = [self.sample() for _ in range(size)]
        res = self.resolution
        masks = [BinaryMask.from_rect(res, res, s.rect) for s in samples]
        discounted = torch.stack([
            make_discounted_mask(m, self.discount_alpha).data.float() for m in masks
        ]).unsqueeze(1)
        return PairBatch(
            x_s=torch.stack([s.x_s for s in samples]),
            x_t=torch.stack([s.x_t for s in samples]),
            same=torch.tensor([s.same_identity for s in samples]),
            masks=masks,
            discounted=discounted,
        )


def sample_pairs(manifest: DatasetManifest, cfg: TrainConfig,
                 rng: Optional[np.random.Generator] = None, **kwargs) -> Iterator[PairSample]:
    """Infinite deterministic PairSample stream (seeded from cfg.seed by default)."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    return PairSampler(manifest, cfg, rng, **kwargs).stream()


# ----------------------------- utilities -----------------------------

def make_optimizer(params, cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "sgd":
        return torch.optim.SGD(params, lr=cfg.lr, momentum=0.9)
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    return torch.optim.AdamW(params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2),
                             weight_decay=cfg.weight_decay)


def param_hash(module: torch.nn.Module) -> str:
    """SHA-256 over all parameters and buffers (order-stable)."""
    digest = hashlib.sha256()
    state = module.state_dict()
    for name in sorted(state):
        digest.update(name.encode())
        digest.update(state[name].detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def freeze(module: torch.nn.Module) -> torch.nn.Module:
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module


def _check_finite(step: int, entries: Dict[str, float]) -> None:
    bad = {k: v for k, v in entries.items() if not math.isfinite(v)}
    if bad:
        raise StateError(f"non-finite loss at step {step}: {bad}")


def write_loss_log(path, log: List[Dict]) -> None:
    with open(path, "w") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


# ----------------------------- checkpoints -----------------------------

def _pack(obj):
    if isinstance(obj, torch.Tensor):
        return {"__tensor__": True,
                "data": np.ascontiguousarray(obj.detach().cpu().numpy())}
    if isinstance(obj, str):
        # canonicalize string identity so pickle memoization (and therefore the
        # byte stream) does not depend on accidental interning of the sources
        return sys.intern(obj)
    if isinstance(obj, dict):
        return {_pack(k): _pack(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        packed = [_pack(v) for v in obj]
        return packed if isinstance(obj, list) else tuple(packed)
    return obj


def _unpack(obj):
    if isinstance(obj, dict):
        if obj.get("__tensor__") is True:
            return torch.from_numpy(obj["data"].copy())
        return {k: _unpack(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        out = [_unpack(v) for v in obj]
        return out if isinstance(obj, list) else tuple(out)
    return obj


@dataclass
class CheckpointBundle:
    kind: str
    step: int
    config: Dict
    modules: Dict[str, Dict[str, torch.Tensor]]
    optimizers: Dict[str, Dict]
    rng: Dict
    extra: Dict = field(default_factory=dict)


def capture_rng(pair_rng: Optional[np.random.Generator] = None) -> Dict:
    rng = {"torch": torch.get_rng_state()}
    if pair_rng is not None:
        rng["numpy"] = pair_rng.bit_generator.state
    return rng


def restore_rng(rng: Dict, pair_rng: Optional[np.random.Generator] = None) -> None:
    torch.set_rng_state(rng["torch"].to(torch.uint8))
    if pair_rng is not None and "numpy" in rng:
        pair_rng.bit_generator.state = rng["numpy"]


def save_checkpoint(path, bundle: CheckpointBundle) -> None:
    """Atomic, deterministic write: same bundle content -> same bytes."""
    payload = _pack({
        "kind": bundle.kind,
        "step": bundle.step,
        "config": bundle.config,
        "modules": bundle.modules,
        "optimizers": bundle.optimizers,
        "rng": bundle.rng,
        "extra": bundle.extra,
    })
    blob = CHECKPOINT_HEADER + pickle.dumps(payload, protocol=4)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def load_checkpoint(path) -> CheckpointBundle:
    blob = Path(path).read_bytes()
    if not blob.startswith(CHECKPOINT_HEADER):
        head = blob.split(b"\n", 1)[0][:64]
        raise CheckpointError(f"unsupported checkpoint header {head!r} in {path}")
    try:
        payload = pickle.loads(blob[len(CHECKPOINT_HEADER):])
    except Exception as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    return CheckpointBundle(
        kind=payload["kind"],
        step=payload["step"],
        config=payload["config"],
        modules=_unpack(payload["modules"]),
        optimizers=_unpack(payload["optimizers"]),
        rng=_unpack(payload["rng"]),
        extra=_unpack(payload["extra"]),
    )


def _expect_kind(bundle: CheckpointBundle, kind: str, path) -> None:
    if bundle.kind != kind:
        raise CheckpointError(f"{path} is a {bundle.kind!r} checkpoint, expected {kind!r}")


def load_fr(path) -> ToyFaceEncoder:
    bundle = load_checkpoint(path)
    _expect_kind(bundle, "fr", path)
    run = RunConfig(**bundle.config)
    fr = ToyFaceEncoder(resolution=run.resolution, embedding_dim=run.identity_dim,
                        base_channels=run.fr_base_channels)
    fr.load_state_dict(bundle.modules["fr"])
    return freeze(fr)


def load_stage1(path) -> Tuple[Stage1Model, StyleCritic, CheckpointBundle]:
    bundle = load_checkpoint(path)
    _expect_kind(bundle, "stage1", path)
    run = RunConfig(**bundle.config)
    model = Stage1Model(run.generator_config(), identity_dim=run.identity_dim)
    critic = StyleCritic(resolution=run.resolution, base_channels=run.critic_base_channels)
    model.load_state_dict(bundle.modules["model"])
    critic.load_state_dict(bundle.modules["critic"])
    return model, critic, bundle


def load_stage2(path) -> Tuple[RefinerNet, PatchCritic, CheckpointBundle]:
    bundle = load_checkpoint(path)
    _expect_kind(bundle, "stage2", path)
    run = RunConfig(**bundle.config)
    refiner = RefinerNet(resolution=run.resolution, base_channels=run.refiner_base_channels)
    critic = PatchCritic(base_channels=run.critic_base_channels)
    refiner.load_state_dict(bundle.modules["refiner"])
    critic.load_state_dict(bundle.modules["critic"])
    return refiner, critic, bundle


# ----------------------------- FR surrogate training -----------------------------

@dataclass
class FRResult:
    fr: ToyFaceEncoder
    head: CosineMarginHead
    loss_log: List[Dict]
    opt: Optional[torch.optim.Optimizer] = None
    rng: Optional[np.random.Generator] = None
    step: int = 0


def split_manifest(manifest: DatasetManifest, holdout_fraction: float = 0.25
                   ) -> Tuple[DatasetManifest, DatasetManifest]:
    """Per-identity split: the last ceil(fraction) images of each identity are
    held out (deterministic, path order)."""
    train_ids, val_ids = [], []
    for label, paths in manifest.identities:
        k = max(1, int(round(len(paths) * (1.0 - holdout_fraction)))) if len(paths) > 1 else 1
        train_ids.append((label, paths[:k]))
        if paths[k:]:
            val_ids.append((label, paths[k:]))
    train = DatasetManifest(manifest.root, manifest.resolution, train_ids)
    val = DatasetManifest(manifest.root, manifest.resolution, val_ids)
    return train, val


def train_fr(manifest: DatasetManifest, run: RunConfig,
             steps: Optional[int] = None, resume_from=None) -> FRResult:
    """Train the toy face-embedding surrogate with a cosine-margin classifier."""
    if manifest.n_identities < 2:
        raise DataError("FR training needs at least 2 identities")
    steps = run.fr_steps if steps is None else steps
    torch.manual_seed(run.seed)
    rng = np.random.default_rng(run.seed)
    fr = ToyFaceEncoder(resolution=run.resolution, embedding_dim=run.identity_dim,
                        base_channels=run.fr_base_channels)
    head = CosineMarginHead(run.identity_dim, manifest.n_identities)
    opt = make_optimizer(list(fr.parameters()) + list(head.parameters()),
                         run.train_config(steps))
    start_step = 0
    if resume_from is not None:
        bundle = load_checkpoint(resume_from)
        _expect_kind(bundle, "fr", resume_from)
        fr.load_state_dict(bundle.modules["fr"])
        head.load_state_dict(bundle.modules["head"])
        opt.load_state_dict(bundle.optimizers["opt"])
        restore_rng(bundle.rng, rng)
        start_step = bundle.step
    flat = manifest.flat()
    images = torch.stack([load_image(p, manifest.resolution) for _, p in flat])
    labels = torch.tensor([idx for idx, _ in flat])
    log = []
    for step in range(start_step, start_step + steps):
        pick = torch.from_numpy(rng.choice(len(flat), size=min(run.fr_batch_size, len(flat)),
                                           replace=False))
        emb = fr.embed(images[pick])
        logits = head(emb, labels[pick])
        loss = torch.nn.functional.cross_entropy(logits, labels[pick])
        opt.zero_grad()
        loss.backward()
        opt.step()
        entry = {"step": step, "loss": float(loss.item())}
        _check_finite(step, entry)
        log.append(entry)
    freeze(fr)
    return FRResult(fr=fr, head=head, loss_log=log, opt=opt, rng=rng,
                    step=start_step + steps)


def save_fr(path, result: FRResult, run: RunConfig) -> None:
    save_checkpoint(path, CheckpointBundle(
        kind="fr", step=result.step, config=run.to_dict(),
        modules={"fr": result.fr.state_dict(), "head": result.head.state_dict()},
        optimizers={"opt": result.opt.state_dict()} if result.opt is not None else {},
        rng=capture_rng(result.rng),
    ))


# ----------------------------- stage 1 -----------------------------

@dataclass
class Stage1Result:
    model: Stage1Model
    critic: StyleCritic
    loss_log: List[Dict]
    g_opt: Optional[torch.optim.Optimizer] = None
    d_opt: Optional[torch.optim.Optimizer] = None
    pair_rng: Optional[np.random.Generator] = None
    step: int = 0


def _loss_scalars(**tensors) -> Dict[str, float]:
    return {k: float(v.item()) if isinstance(v, torch.Tensor) else float(v)
            for k, v in tensors.items()}


def train_stage1(manifest: DatasetManifest, fr, run: RunConfig,
                 steps: Optional[int] = None,
                 resume_from=None) -> Stage1Result:
    """Alternating critic/generator training of the patch synthesis stage.

    The attacked backbone stays frozen (verified by hash). ``fr`` may be a
    single backbone or a sequence of them (white-box ensemble): the first one
    feeds the identity encoder, the adversarial losses are averaged over all.
    Pass ``resume_from`` to continue a saved run; RNG and optimizer state are
    restored so the trajectory matches an uninterrupted run.
    """
    frs = list(fr) if isinstance(fr, (list, tuple)) else [fr]
    if not frs or not all(getattr(f, "differentiable", False) for f in frs):
        raise StateError("stage-1 training needs differentiable (white-box) backbones")
    fr = frs[0]
    steps = run.stage1_steps if steps is None else steps
    torch.manual_seed(run.seed)
    pair_rng = np.random.default_rng(run.seed + 1)

    model = Stage1Model(run.generator_config(), identity_dim=run.identity_dim)
    critic = StyleCritic(resolution=run.resolution, base_channels=run.critic_base_channels)
    cfg = run.train_config(steps)
    g_opt = make_optimizer(model.parameters(), cfg)
    d_opt = make_optimizer(critic.parameters(), cfg)

    for f in frs:
        freeze(f)
    fr_hashes = [param_hash(f) if isinstance(f, torch.nn.Module) else None for f in frs]
    weights = run.loss_weights()
    perceptual = PerceptualConfig(ToyFeatureExtractor(seed=run.perceptual_seed))
    sampler = PairSampler(manifest, cfg, pair_rng, run.rect_min_scale,
                          run.rect_max_scale, run.discount_alpha)

    # restore last: all module construction above consumes the global torch RNG
    start_step = 0
    if resume_from is not None:
        bundle = load_checkpoint(resume_from)
        _expect_kind(bundle, "stage1", resume_from)
        model.load_state_dict(bundle.modules["model"])
        critic.load_state_dict(bundle.modules["critic"])
        g_opt.load_state_dict(bundle.optimizers["g"])
        d_opt.load_state_dict(bundle.optimizers["d"])
        restore_rng(bundle.rng, pair_rng)
        start_step = bundle.step

    log = []
    for step in range(start_step, start_step + steps):
        batch = sampler.batch(cfg.batch_size)

        # critic step (non-saturating logistic + R1 on real samples)
        with torch.no_grad():
            _, x_out_d = model.generate(batch.x_s, batch.x_t, batch.masks, fr)
        d_real = critic(batch.x_s)
        d_fake = critic(x_out_d)
        d_loss = L.nonsaturating_d_loss(d_real, d_fake) \
            + 0.5 * weights.r1_coeff * L.r1_penalty(critic, batch.x_s)
        d_opt.zero_grad()
        d_loss.backward()
        d_opt.step()

        # generator step
        x_syn, x_out = model.generate(batch.x_s, batch.x_t, batch.masks, fr)
        adv = torch.stack([L.adv_loss(x_out, batch.x_t, f) for f in frs]).mean()
        rec = L.recovery_loss_stage1(x_syn, batch.x_s, batch.same, batch.discounted)
        lp = L.lpips(x_syn, batch.x_s, perceptual)
        gan = L.nonsaturating_g_loss(critic(x_out))
        total = L.stage1_total(adv, rec, lp, gan, weights)
        g_opt.zero_grad()
        total.backward()
        g_opt.step()

        entry = {"step": step, **_loss_scalars(adv=adv, rec=rec, lpips=lp, gan=gan,
                                               total=total, d_loss=d_loss)}
        _check_finite(step, entry)
        log.append(entry)

    for f, expected in zip(frs, fr_hashes):
        if expected is not None and param_hash(f) != expected:
            raise StateError("frozen FR backbone was modified during stage-1 training")
    return Stage1Result(model=model, critic=critic, loss_log=log, g_opt=g_opt,
                        d_opt=d_opt, pair_rng=pair_rng, step=start_step + steps)


def save_stage1(path, result: Stage1Result, run: RunConfig) -> None:
    optimizers = {}
    if result.g_opt is not None and result.d_opt is not None:
        optimizers = {"g": result.g_opt.state_dict(), "d": result.d_opt.state_dict()}
    save_checkpoint(path, CheckpointBundle(
        kind="stage1", step=result.step, config=run.to_dict(),
        modules={"model": result.model.state_dict(), "critic": result.critic.state_dict()},
        optimizers=optimizers,
        rng=capture_rng(result.pair_rng),
    ))


# ----------------------------- stage 2 -----------------------------

@dataclass
class Stage2Result:
    refiner: RefinerNet
    critic: PatchCritic
    loss_log: List[Dict]
    g_opt: Optional[torch.optim.Optimizer] = None
    d_opt: Optional[torch.optim.Optimizer] = None
    pair_rng: Optional[np.random.Generator] = None
    step: int = 0


def train_stage2(manifest: DatasetManifest, stage1: Stage1Model, fr: FRBackbone,
                 run: RunConfig, steps: Optional[int] = None,
                 resume_from=None) -> Stage2Result:
    """Train the refiner against a patch critic (Wasserstein + gradient penalty)
    on frozen stage-1 outputs."""
    if stage1 is None:
        raise StateError("stage-2 training needs a trained stage-1 model")
    steps = run.stage2_steps if steps is None else steps
    torch.manual_seed(run.seed + 2)
    pair_rng = np.random.default_rng(run.seed + 3)

    refiner = RefinerNet(resolution=run.resolution, base_channels=run.refiner_base_channels)
    critic = PatchCritic(base_channels=run.critic_base_channels)
    cfg = run.train_config(steps)
    g_opt = make_optimizer(refiner.parameters(), cfg)
    d_opt = make_optimizer(critic.parameters(), cfg)

    freeze(fr)
    freeze(stage1)
    fr_hash = param_hash(fr) if isinstance(fr, torch.nn.Module) else None
    stage1_hash = param_hash(stage1)
    weights = run.loss_weights()
    perceptual = PerceptualConfig(ToyFeatureExtractor(seed=run.perceptual_seed))
    sampler = PairSampler(manifest, cfg, pair_rng, run.rect_min_scale,
                          run.rect_max_scale, run.discount_alpha)

    # restore last: all module construction above consumes the global torch RNG
    start_step = 0
    if resume_from is not None:
        bundle = load_checkpoint(resume_from)
        _expect_kind(bundle, "stage2", resume_from)
        refiner.load_state_dict(bundle.modules["refiner"])
        critic.load_state_dict(bundle.modules["critic"])
        g_opt.load_state_dict(bundle.optimizers["g"])
        d_opt.load_state_dict(bundle.optimizers["d"])
        restore_rng(bundle.rng, pair_rng)
        start_step = bundle.step

    log = []
    for step in range(start_step, start_step + steps):
        batch = sampler.batch(cfg.batch_size)
        with torch.no_grad():
            _, x_out = stage1.generate(batch.x_s, batch.x_t, batch.masks, fr)

        # critic step (Wasserstein + gradient penalty)
        with torch.no_grad():
            x_ref_d = refiner(x_out, batch.x_s, batch.masks)
        d_loss = L.wasserstein_d_loss(
            critic(batch.x_s).flatten(1).mean(1), critic(x_ref_d).flatten(1).mean(1)
        ) + weights.gp_coeff * L.gradient_penalty(critic, batch.x_s, x_ref_d)
        d_opt.zero_grad()
        d_loss.backward()
        d_opt.step()

        # refiner step
        x_refine = refiner(x_out, batch.x_s, batch.masks)
        adv = L.adv_loss(x_refine, batch.x_t, fr)
        rec = L.recovery_loss_stage2(x_refine, x_out, batch.x_s, batch.same, batch.discounted)
        bv = L.boundary_variance_loss(x_refine, batch.x_s, batch.masks)
        lp = L.lpips(x_refine, batch.x_s, perceptual)
        gan = L.wasserstein_g_loss(critic(x_refine).flatten(1).mean(1))
        total = L.stage2_total(adv, rec, bv, gan, lp, weights)
        g_opt.zero_grad()
        total.backward()
        g_opt.step()

        entry = {"step": step, **_loss_scalars(adv=adv, rec=rec, bv=bv, lpips=lp,
                                               gan=gan, total=total, d_loss=d_loss)}
        _check_finite(step, entry)
        log.append(entry)

    if fr_hash is not None and param_hash(fr) != fr_hash:
        raise StateError("frozen FR backbone was modified during stage-2 training")
    if param_hash(stage1) != stage1_hash:
        raise StateError("frozen stage-1 model was modified during stage-2 training")
    return Stage2Result(refiner=refiner, critic=critic, loss_log=log, g_opt=g_opt,
                        d_opt=d_opt, pair_rng=pair_rng, step=start_step + steps)


def save_stage2(path, result: Stage2Result, run: RunConfig) -> None:
    optimizers = {}
    if result.g_opt is not None and result.d_opt is not None:
        optimizers = {"g": result.g_opt.state_dict(), "d": result.d_opt.state_dict()}
    save_checkpoint(path, CheckpointBundle(
        kind="stage2", step=result.step, config=run.to_dict(),
        modules={"refiner": result.refiner.state_dict(), "critic": result.critic.state_dict()},
        optimizers=optimizers,
        rng=capture_rng(result.pair_rng),
    ))
