"""Command-line entry points for the whole pipeline.

Commands: gen-data, train-fr, train-stage1, train-stage2, attack, calibrate,
evaluate, curve. Every command is reproducible from (config file, seed); on
failure a machine-readable JSON error is printed to stderr and the exit code
is nonzero.

Pair-list file format (one comma-separated record per line):

    # patchfill-pairs v1
    source.png,target.png,left,top,right,bottom
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import torch

from .config import RunConfig, parse_config_file
from .data import gen_synthetic_dataset, ingest_dataset, load_image, save_image, verification_pairs
from .errors import PatchfillError, UsageError
from .evaluation import (
    build_report,
    calibrate_threshold,
    cosine_scores,
    mse_metric,
    fid_metric,
    verification_scores,
)
from .losses import PerceptualConfig, ToyFeatureExtractor, lpips
from .masks import BinaryMask, PatchRect
from .networks import FRBackbone, RefinerNet, Stage1Model
from .training import (
    freeze,
    load_fr,
    load_stage1,
    load_stage2,
    save_fr,
    save_stage1,
    save_stage2,
    train_fr,
    train_stage1,
    train_stage2,
    write_loss_log,
)

PAIRS_HEADER = "# patchfill-pairs v1"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = parse_config_file(args.config)
    else:
        cfg = RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = RunConfig(**{**cfg.to_dict(), "seed": args.seed})
    return cfg


def parse_rect(text: str) -> PatchRect:
    parts = text.split(",")
    if len(parts) != 4:
        raise UsageError(f"rect must be LEFT,TOP,RIGHT,BOTTOM, got {text!r}")
    try:
        l, t, r, b = (int(p) for p in parts)
    except ValueError as exc:
        raise UsageError(f"rect coordinates must be integers: {text!r}") from exc
    try:
        return PatchRect(l, t, r, b)
    except PatchfillError as exc:
        raise UsageError(f"malformed rect {text!r}: {exc}") from exc


def _checked_rect(rect: PatchRect, resolution: int) -> PatchRect:
    try:
        rect.validate_within(resolution, resolution)
    except PatchfillError as exc:
        raise UsageError(str(exc)) from exc
    if rect.exceeds_area_bound(resolution, resolution):
        raise UsageError(
            f"rect area {rect.area} exceeds the proportional 50x100-at-256 bound "
            f"for {resolution}x{resolution} images"
        )
    return rect


def read_pair_list(path) -> List[Tuple[str, str, PatchRect]]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != PAIRS_HEADER:
        raise UsageError(f"pair list must start with {PAIRS_HEADER!r}")
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise UsageError(f"{path}:{lineno}: expected source,target,l,t,r,b")
        rect = parse_rect(",".join(parts[2:]))
        out.append((parts[0].strip(), parts[1].strip(), rect))
    if not out:
        raise UsageError(f"pair list {path} has no records")
    return out


def write_pair_list(path, records) -> None:
    lines = [PAIRS_HEADER]
    for src, tgt, rect in records:
        lines.append(f"{src},{tgt},{rect.left},{rect.top},{rect.right},{rect.bottom}")
    Path(path).write_text("\n".join(lines) + "\n")


# ----------------------------- commands -----------------------------

def cmd_gen_data(args) -> int:
    manifest = gen_synthetic_dataset(args.out, args.identities, args.per_identity,
                                     resolution=args.resolution, seed=args.seed)
    print(json.dumps({"root": str(manifest.root), "identities": manifest.n_identities,
                      "images": manifest.n_images, "resolution": manifest.resolution}))
    return 0


def cmd_train_fr(args) -> int:
    run = _run_config(args)
    manifest = ingest_dataset(args.data)
    result = train_fr(manifest, run, steps=args.steps)
    save_fr(args.out, result, run)
    if args.loss_log:
        write_loss_log(args.loss_log, result.loss_log)
    print(json.dumps({"checkpoint": str(args.out), "steps": result.step,
                      "final_loss": result.loss_log[-1]["loss"] if result.loss_log else None}))
    return 0


def cmd_train_stage1(args) -> int:
    run = _run_config(args)
    manifest = ingest_dataset(args.data)
    fr = load_fr(args.fr)
    result = train_stage1(manifest, fr, run, steps=args.steps, resume_from=args.resume)
    save_stage1(args.out, result, run)
    if args.loss_log:
        write_loss_log(args.loss_log, result.loss_log)
    print(json.dumps({"checkpoint": str(args.out), "steps": result.step}))
    return 0


def cmd_train_stage2(args) -> int:
    run = _run_config(args)
    manifest = ingest_dataset(args.data)
    fr = load_fr(args.fr)
    stage1, _, _ = load_stage1(args.ckpt1)
    freeze(stage1)
    result = train_stage2(manifest, stage1, fr, run, steps=args.steps,
                          resume_from=args.resume)
    save_stage2(args.out, result, run)
    if args.loss_log:
        write_loss_log(args.loss_log, result.loss_log)
    print(json.dumps({"checkpoint": str(args.out), "steps": result.step}))
    return 0


def _load_attack_models(fr_path, ckpt1, ckpt2) -> Tuple[FRBackbone, Stage1Model, Optional[RefinerNet], RunConfig]:
    fr = load_fr(fr_path)
    stage1, _, bundle = load_stage1(ckpt1)
    freeze(stage1)
    run = RunConfig(**bundle.config)
    refiner = None
    if ckpt2 is not None:
        refiner, _, _ = load_stage2(ckpt2)
        freeze(refiner)
    return fr, stage1, refiner, run


def _generate_adversarial(fr, stage1, refiner, x_s, x_t, mask):
    with torch.no_grad():
        _, x_out = stage1.generate(x_s.unsqueeze(0), x_t.unsqueeze(0), [mask], fr)
        x_adv = x_out
        x_refine = None
        if refiner is not None:
            x_refine = refiner(x_out, x_s.unsqueeze(0), [mask])
            x_adv = x_refine
    return x_out[0], (x_refine[0] if x_refine is not None else None), x_adv[0]


def cmd_attack(args) -> int:
    fr, stage1, refiner, run = _load_attack_models(args.fr, args.ckpt1, args.ckpt2)
    rect = _checked_rect(parse_rect(args.rect), run.resolution)
    x_s = load_image(args.source, run.resolution)
    x_t = load_image(args.target, run.resolution)
    mask = BinaryMask.from_rect(run.resolution, run.resolution, rect)
    x_out, x_refine, x_adv = _generate_adversarial(fr, stage1, refiner, x_s, x_t, mask)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_image(x_out, out_dir / "x_out.png")
    if x_refine is not None:
        save_image(x_refine, out_dir / "x_refine.png")

    with torch.no_grad():
        e_t = fr.embed(x_t.unsqueeze(0))
        sim_before = float(torch.cosine_similarity(fr.embed(x_s.unsqueeze(0)), e_t)[0])
        sim_out = float(torch.cosine_similarity(fr.embed(x_out.unsqueeze(0)), e_t)[0])
        sim_after = float(torch.cosine_similarity(fr.embed(x_adv.unsqueeze(0)), e_t)[0])
    sidecar = {
        "source": str(args.source),
        "target": str(args.target),
        "rect": [rect.left, rect.top, rect.right, rect.bottom],
        "similarity_before": sim_before,
        "similarity_after": sim_after,
        "similarity_stage1": sim_out,
        "refined": x_refine is not None,
    }
    (out_dir / "attack.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    print(json.dumps(sidecar))
    return 0


def cmd_calibrate(args) -> int:
    fr = load_fr(args.fr)
    manifest = ingest_dataset(args.data)
    rng = np.random.default_rng(args.seed)
    pairs = verification_pairs(manifest, args.pairs, args.pairs, rng)
    genuine, impostor = verification_scores(fr, pairs)
    result = calibrate_threshold(genuine, impostor, k_folds=args.k_folds)
    payload = {"tau": result.tau, "accuracy": result.accuracy,
               "fold_taus": result.fold_taus,
               "n_genuine": int(genuine.size), "n_impostor": int(impostor.size)}
    Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(json.dumps(payload))
    return 0


def _tau_from_args(args) -> float:
    if args.tau is not None:
        return args.tau
    if args.calibration is not None:
        return float(json.loads(Path(args.calibration).read_text())["tau"])
    raise UsageError("supply --tau or --calibration")


def _score_pairs(args) -> Tuple[np.ndarray, float, float, float]:
    """Run the attack over a pair list; returns (scores, mse, fid, lpips)."""
    fr, stage1, refiner, run = _load_attack_models(args.fr, args.ckpt1, args.ckpt2)
    records = read_pair_list(args.pairs)
    extractor = ToyFeatureExtractor(seed=run.perceptual_seed)
    perceptual = PerceptualConfig(extractor)
    pairs, mses, lps = [], [], []
    src_feats, adv_feats = [], []
    for src, tgt, rect in records:
        rect = _checked_rect(rect, run.resolution)
        x_s = load_image(src, run.resolution)
        x_t = load_image(tgt, run.resolution)
        mask = BinaryMask.from_rect(run.resolution, run.resolution, rect)
        _, _, x_adv = _generate_adversarial(fr, stage1, refiner, x_s, x_t, mask)
        pairs.append((x_t, x_adv))
        mses.append(mse_metric(x_adv, x_s))
        with torch.no_grad():
            lps.append(float(lpips(x_adv, x_s, perceptual)))
            src_feats.append(extractor.pooled(x_s.unsqueeze(0))[0].numpy())
            adv_feats.append(extractor.pooled(x_adv.unsqueeze(0))[0].numpy())
    scores = cosine_scores(pairs, fr)
    fid = fid_metric(np.stack(src_feats), np.stack(adv_feats))
    return scores, float(np.mean(mses)), fid, float(np.mean(lps))


def cmd_evaluate(args) -> int:
    tau = _tau_from_args(args)
    scores, mse, fid, lp = _score_pairs(args)
    report, curve = build_report({args.model_name: scores}, {args.model_name: tau},
                                 mse=mse, fid=fid, lpips_score=lp)
    Path(args.out).write_text(report.to_json())
    if args.curve_out:
        Path(args.curve_out).write_text(curve.to_csv())
    print(report.to_json(), end="")
    return 0


def cmd_curve(args) -> int:
    tau = args.tau if args.tau is not None else 0.0
    scores, mse, fid, lp = _score_pairs(args)
    _, curve = build_report({args.model_name: scores}, {args.model_name: tau},
                            mse=mse, fid=fid, lpips_score=lp)
    Path(args.out).write_text(curve.to_csv())
    print(json.dumps({"curve": str(args.out), "rows": len(curve.taus)}))
    return 0


# ----------------------------- parser -----------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="patchfill",
                description="Two-stage adversarial patch pipeline for face-embedding models")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a synthetic identity dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--identities", type=int, default=32)
    g.add_argument("--per-identity", type=int, default=16)
    g.add_argument("--resolution", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train-fr", help="train the toy face-embedding surrogate")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int)
    t.add_argument("--loss-log")
    t.set_defaults(func=cmd_train_fr)

    s1 = sub.add_parser("train-stage1", help="train the patch synthesis stage")
    s1.add_argument("--data", required=True)
    s1.add_argument("--fr", required=True)
    s1.add_argument("--out", required=True)
    s1.add_argument("--config")
    s1.add_argument("--seed", type=int)
    s1.add_argument("--steps", type=int)
    s1.add_argument("--resume")
    s1.add_argument("--loss-log")
    s1.set_defaults(func=cmd_train_stage1)

    s2 = sub.add_parser("train-stage2", help="train the patch refinement stage")
    s2.add_argument("--data", required=True)
    s2.add_argument("--fr", required=True)
    s2.add_argument("--ckpt1", required=True)
    s2.add_argument("--out", required=True)
    s2.add_argument("--config")
    s2.add_argument("--seed", type=int)
    s2.add_argument("--steps", type=int)
    s2.add_argument("--resume")
    s2.add_argument("--loss-log")
    s2.set_defaults(func=cmd_train_stage2)

    a = sub.add_parser("attack", help="inpaint one adversarial patch")
    a.add_argument("--source", required=True)
    a.add_argument("--target", required=True)
    a.add_argument("--rect", required=True, help="LEFT,TOP,RIGHT,BOTTOM (inclusive)")
    a.add_argument("--fr", required=True)
    a.add_argument("--ckpt1", required=True)
    a.add_argument("--ckpt2")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_attack)

    c = sub.add_parser("calibrate", help="K-fold threshold calibration")
    c.add_argument("--data", required=True)
    c.add_argument("--fr", required=True)
    c.add_argument("--pairs", type=int, default=100)
    c.add_argument("--k-folds", type=int, default=10)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("evaluate", help="score a pair list and emit a report")
    e.add_argument("--pairs", required=True)
    e.add_argument("--fr", required=True)
    e.add_argument("--ckpt1", required=True)
    e.add_argument("--ckpt2")
    e.add_argument("--tau", type=float)
    e.add_argument("--calibration", help="JSON file written by `patchfill calibrate`")
    e.add_argument("--model-name", default="whitebox")
    e.add_argument("--out", required=True)
    e.add_argument("--curve-out")
    e.set_defaults(func=cmd_evaluate)

    cv = sub.add_parser("curve", help="emit the ASR-vs-threshold curve as CSV")
    cv.add_argument("--pairs", required=True)
    cv.add_argument("--fr", required=True)
    cv.add_argument("--ckpt1", required=True)
    cv.add_argument("--ckpt2")
    cv.add_argument("--tau", type=float)
    cv.add_argument("--model-name", default="whitebox")
    cv.add_argument("--out", required=True)
    cv.set_defaults(func=cmd_curve)

    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except PatchfillError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2
    except OSError as exc:
        print(json.dumps({"error": "OSError", "message": str(exc)}), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
