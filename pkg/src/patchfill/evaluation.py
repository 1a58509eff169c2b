"""Attack-success and stealthiness metrics, threshold calibration, reporting.

ASR counts pairs whose embedding cosine similarity to the target strictly
exceeds the model's threshold tau; tau is either supplied (published per-model
values can be used directly) or calibrated on genuine/impostor score lists via
K-fold cross-validation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, DataError, DomainError
from .networks import FRBackbone

CURVE_HEADER = "# patchfill-curve v1"
REPORT_FORMAT = "patchfill-report-v1"

# Published verification thresholds (CelebA-calibrated) for common backbones;
# usable directly instead of local calibration.
PUBLISHED_TAUS = {
    "arcface": 0.23,
    "cosface": 0.26,
    "mobileface": 0.19,
    "facenet": 0.36,
}


@dataclass
class EvalConfig:
    """Per-model thresholds plus calibration fold count."""

    taus: Dict[str, float] = field(default_factory=dict)
    k_folds: int = 10

    def __post_init__(self):
        if self.k_folds < 2:
            raise ConfigError(f"k_folds must be >= 2, got {self.k_folds}")
        for name, tau in self.taus.items():
            if not -1.0 <= tau <= 1.0:
                raise ConfigError(f"tau for {name} must lie in [-1, 1], got {tau}")


def cosine_scores(pairs: Sequence[Tuple[torch.Tensor, torch.Tensor]],
                  fr: FRBackbone) -> np.ndarray:
    """cossim(f(x_t), f(x_adv)) for every (x_t, x_adv) pair."""
    if len(pairs) == 0:
        raise DomainError("empty pair list")
    with torch.no_grad():
        x_t = torch.stack([p[0] for p in pairs])
        x_adv = torch.stack([p[1] for p in pairs])
        e_t = fr.embed(x_t)
        e_a = fr.embed(x_adv)
        return F.cosine_similarity(e_t, e_a, dim=-1).cpu().numpy().astype(np.float64)


def asr_from_scores(scores: np.ndarray, tau: float) -> float:
    """Percent of scores strictly above tau."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise DomainError("empty score list")
    return 100.0 * float(np.count_nonzero(scores > tau)) / scores.size


def asr(pairs, fr: FRBackbone, tau: float) -> float:
    """Attack success rate in percent over (target, adversarial) pairs."""
    return asr_from_scores(cosine_scores(pairs, fr), tau)


@dataclass
class CalibrationResult:
    tau: float
    accuracy: float          # mean held-out fold accuracy at the fold optima
    fold_taus: List[float]


def _accuracy(genuine: np.ndarray, impostor: np.ndarray, tau: float) -> float:
    correct = np.count_nonzero(genuine > tau) + np.count_nonzero(impostor <= tau)
    return correct / (genuine.size + impostor.size)


def calibrate_threshold(genuine_scores, impostor_scores, k_folds: int = 10) -> CalibrationResult:
    """Pick the verification threshold by K-fold cross-validation.

    Per fold, candidate thresholds are the midpoints of consecutive distinct
    training scores (plus one sentinel below and above everything); the fold
    optimum maximizes training accuracy, ties resolved to the smallest tau.
    The returned tau averages the fold optima; the returned accuracy averages
    held-out fold accuracy at each fold's own optimum.
    """
    genuine = np.asarray(list(genuine_scores), dtype=np.float64)
    impostor = np.asarray(list(impostor_scores), dtype=np.float64)
    if genuine.size == 0 or impostor.size == 0:
        raise DataError("calibration needs nonempty genuine and impostor score lists")
    if genuine.size < k_folds or impostor.size < k_folds:
        raise DataError(
            f"need at least {k_folds} scores per class for {k_folds}-fold calibration "
            f"(got {genuine.size} genuine, {impostor.size} impostor)"
        )
    g_folds = np.array_split(genuine, k_folds)
    i_folds = np.array_split(impostor, k_folds)

    fold_taus = []
    holdout_accs = []
    for i in range(k_folds):
        train_g = np.concatenate([g_folds[j] for j in range(k_folds) if j != i])
        train_i = np.concatenate([i_folds[j] for j in range(k_folds) if j != i])
        all_train = np.unique(np.concatenate([train_g, train_i]))
        candidates = [all_train[0] - 1.0]
        candidates += [0.5 * (a + b) for a, b in zip(all_train[:-1], all_train[1:])]
        candidates.append(all_train[-1] + 1.0)
        best_tau, best_acc = None, -1.0
        for tau in candidates:
            acc = _accuracy(train_g, train_i, tau)
            if acc > best_acc or (acc == best_acc and tau < best_tau):
                best_tau, best_acc = tau, acc
        fold_taus.append(float(best_tau))
        holdout_accs.append(_accuracy(g_folds[i], i_folds[i], best_tau))
    return CalibrationResult(
        tau=float(np.mean(fold_taus)),
        accuracy=float(np.mean(holdout_accs)),
        fold_taus=fold_taus,
    )


def verification_scores(fr: FRBackbone, pairs) -> Tuple[np.ndarray, np.ndarray]:
    """(genuine, impostor) cosine-score arrays for (path_a, path_b, same) pairs."""
    from .data import load_image  # local import keeps data optional for metric-only use

    genuine, impostor = [], []
    with torch.no_grad():
        for path_a, path_b, same in pairs:
            e_a = fr.embed(load_image(path_a).unsqueeze(0))
            e_b = fr.embed(load_image(path_b).unsqueeze(0))
            score = float(F.cosine_similarity(e_a, e_b, dim=-1)[0])
            (genuine if same else impostor).append(score)
    return np.asarray(genuine, dtype=np.float64), np.asarray(impostor, dtype=np.float64)


def mse_metric(x, y) -> float:
    """Mean squared error over all elements."""
    a = np.asarray(x.detach().cpu().numpy() if isinstance(x, torch.Tensor) else x, dtype=np.float64)
    b = np.asarray(y.detach().cpu().numpy() if isinstance(y, torch.Tensor) else y, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition, negatives clipped to 0."""
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid_metric(features_a: np.ndarray, features_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two feature sets [n,d].

    Implemented as ||mu_a-mu_b||^2 + Tr(S_a) + Tr(S_b) - 2 Tr((S_a^1/2 S_b S_a^1/2)^1/2),
    which equals the usual Tr-sqrt(S_a S_b) form but stays in symmetric PSD
    territory for the eigendecomposition-based square roots.
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DataError(f"feature sets must be [n,d] with matching d: {a.shape} vs {b.shape}")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise DataError("need at least 2 samples per set to estimate covariance")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False))
    sqrt_a = _psd_sqrt(cov_a)
    cross = _psd_sqrt(sqrt_a @ cov_b @ sqrt_a)
    fid = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b)
                - 2.0 * np.trace(cross))
    return max(fid, 0.0)


# ----------------------------- report assembly -----------------------------

TAU_GRID = tuple(round(0.01 * i, 2) for i in range(101))


@dataclass
class AsrCurve:
    """ASR over the tau grid (0.00..1.00, step 0.01) for each model."""

    taus: Tuple[float, ...]
    asr_by_model: Dict[str, List[float]]

    def to_csv(self) -> str:
        names = list(self.asr_by_model)
        lines = [CURVE_HEADER, ",".join(["tau"] + [f"asr_{n}" for n in names])]
        for i, tau in enumerate(self.taus):
            row = [f"{tau:.2f}"] + [f"{self.asr_by_model[n][i]:.4f}" for n in names]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


@dataclass
class EvalReport:
    """Per-model ASR plus stealthiness scores for one evaluation run."""

    n_pairs: int
    models: Dict[str, Dict[str, float]]   # name -> {"asr": ..., "tau": ...}
    mse: float
    fid: float
    lpips: float

    def to_json(self) -> str:
        payload = {
            "format": REPORT_FORMAT,
            "n_pairs": self.n_pairs,
            "models": self.models,
            "mse": self.mse,
            "fid": self.fid,
            "lpips": self.lpips,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        payload = json.loads(text)
        if payload.get("format") != REPORT_FORMAT:
            raise DataError(f"unsupported report format: {payload.get('format')!r}")
        return cls(n_pairs=payload["n_pairs"], models=payload["models"],
                   mse=payload["mse"], fid=payload["fid"], lpips=payload["lpips"])


def build_report(
    model_scores: Dict[str, np.ndarray],
    taus: Dict[str, float],
    mse: float,
    fid: float,
    lpips_score: float,
) -> Tuple[EvalReport, AsrCurve]:
    """Aggregate per-model similarity scores into a report and an ASR-vs-tau curve."""
    if not model_scores:
        raise DataError("no model scores supplied")
    sizes = {name: np.asarray(s).size for name, s in model_scores.items()}
    n = next(iter(sizes.values()))
    if any(v != n for v in sizes.values()) or n == 0:
        raise DataError(f"inconsistent pair sets across models: {sizes}")
    models = {}
    curve = {}
    for name, scores in model_scores.items():
        if name not in taus:
            raise DataError(f"no tau supplied for model {name!r}")
        models[name] = {"asr": asr_from_scores(scores, taus[name]), "tau": float(taus[name])}
        curve[name] = [asr_from_scores(scores, t) for t in TAU_GRID]
    report = EvalReport(n_pairs=int(n), models=models, mse=float(mse),
                        fid=float(fid), lpips=float(lpips_score))
    return report, AsrCurve(taus=TAU_GRID, asr_by_model=curve)
