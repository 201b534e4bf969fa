"""Accuracy, calibration error, AUROC and the post-training evaluation report."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from .benchmark import ID_NOISY, OOD, TaggedDataset
from .model import AeonModel
from .noise_estimation import MaskConfig, NoiseRateEstimator, adaptive_threshold, batch_stats, soft_mask

DEFAULT_ECE_BINS = 15


def accuracy(predictions, true_labels) -> float:
    """Fraction correct. ``predictions`` are class indices or an (N, C) score
    matrix (argmax, ties to the lowest index)."""
    p = np.asarray(predictions)
    y = np.asarray(true_labels)
    if p.ndim == 2:
        p = p.argmax(axis=1)
    if len(p) == 0:
        raise ValueError("accuracy of an empty set")
    if len(p) != len(y):
        raise ValueError("predictions and labels differ in length")
    return float(np.mean(p == y))


def ece(confidences, correct, bins: int = DEFAULT_ECE_BINS) -> float:
    """Expected calibration error with equal-width, right-closed bins on [0, 1].

    Bin b covers (b/B, (b+1)/B]; a confidence of exactly 0 goes to the first bin.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    corr = np.asarray(correct, dtype=np.float64)
    if bins < 1:
        raise ValueError("need at least one bin")
    n = len(conf)
    if n == 0:
        return 0.0
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=bins)
    acc_sum = np.bincount(idx, weights=corr, minlength=bins)
    nz = counts > 0
    gaps = np.abs(acc_sum[nz] - conf_sum[nz]) / counts[nz]
    return float(np.sum(counts[nz] / n * gaps))


def ece_from_probs(probs, true_labels, bins: int = DEFAULT_ECE_BINS) -> float:
    probs = np.asarray(probs)
    return ece(probs.max(axis=1), probs.argmax(axis=1) == np.asarray(true_labels), bins)


def auroc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), exact via average ranks."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both positive and negative examples")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s))
    sorted_s = s[order]
    # average 1-based ranks over runs of equal scores
    boundaries = np.flatnonzero(np.diff(sorted_s)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(s)]])
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = (a + 1 + b) / 2.0
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _auroc_or_none(scores, labels):
    try:
        return auroc(scores, labels)
    except ValueError:
        return None


@dataclass
class EvalReport:
    test_accuracy: float
    test_ece: float
    ece_bins: int
    eta_id: float
    eta_ood: float
    r_id: float | None
    r_ood: float | None
    abs_err_id: float | None
    abs_err_ood: float | None
    auroc_ood: float | None
    auroc_id: float | None
    config_digest: str
    seed: int | None

    def to_dict(self) -> dict:
        return asdict(self)


def config_digest(config_dict: dict) -> str:
    blob = json.dumps(config_dict, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def dataset_scores(model: AeonModel, est_id: NoiseRateEstimator, est_ood: NoiseRateEstimator,
                   data: TaggedDataset, mask: MaskConfig) -> dict[str, np.ndarray]:
    """Soft masks over a whole dataset, thresholds from whole-set statistics.

    Besides ``w_id``/``w_ood`` this returns the sigmoid arguments
    ``(score - tau) / beta``: a strictly increasing function of ``1 - w``
    that does not saturate to ties in floating point, used for ranking.
    """
    logits = model.predict_logits(data.features)
    z = logits / mask.T_E
    zmax = z.max(axis=1)
    E = -mask.T_E * (zmax + np.log(np.exp(z - zmax[:, None]).sum(axis=1)))
    lse = logits.max(axis=1) + np.log(np.exp(logits - logits.max(axis=1, keepdims=True)).sum(axis=1))
    ls = lse - logits[np.arange(len(data)), data.noisy_labels]
    tau_ood = float(adaptive_threshold(est_ood.rate, batch_stats(E), mask.eta_eps).data)
    tau_id = float(adaptive_threshold(est_id.rate, batch_stats(ls), mask.eta_eps).data)
    return {
        "w_ood": soft_mask(tau_ood, E, mask.beta_ood).data,
        "w_id": soft_mask(tau_id, ls, mask.beta_id).data,
        "noise_ood": (E - tau_ood) / mask.beta_ood,
        "noise_id": (ls - tau_id) / mask.beta_id,
        "energy": E,
        "sup_loss": ls,
    }


def evaluate(model: AeonModel, est_id: NoiseRateEstimator, est_ood: NoiseRateEstimator,
             data: TaggedDataset, test: TaggedDataset, mask: MaskConfig | None = None,
             bins: int = DEFAULT_ECE_BINS, config: dict | None = None, seed: int | None = None) -> EvalReport:
    mask = mask or MaskConfig()
    probs = model.predict_proba(test.features)
    acc = accuracy(probs, test.true_labels)
    cal = ece_from_probs(probs, test.true_labels, bins)
    sc = dataset_scores(model, est_id, est_ood, data, mask)
    is_ood = data.tags == OOD
    auroc_ood = _auroc_or_none(sc["noise_ood"], is_ood)
    keep = ~is_ood
    auroc_id = _auroc_or_none(sc["noise_id"][keep], data.tags[keep] == ID_NOISY)
    r_id, r_ood = data.meta.get("r_id"), data.meta.get("r_ood")
    eta_id, eta_ood = est_id.rate, est_ood.rate
    return EvalReport(
        test_accuracy=acc, test_ece=cal, ece_bins=bins, eta_id=eta_id, eta_ood=eta_ood,
        r_id=r_id, r_ood=r_ood,
        abs_err_id=None if r_id is None else abs(eta_id - r_id),
        abs_err_ood=None if r_ood is None else abs(eta_ood - r_ood),
        auroc_ood=auroc_ood, auroc_id=auroc_id,
        config_digest=config_digest(config or {}), seed=seed,
    )
