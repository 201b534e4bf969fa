"""Per-batch training objective: masked supervised/unsupervised/energy terms plus contrastive terms."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Value, as_value, logsumexp, max0
from .model import AeonModel
from .noise_estimation import (
    BatchStats, MaskConfig, attached_threshold, NoiseRateEstimator, adaptive_threshold, batch_stats,
    energy_score, estimate_rate, soft_mask,
)


@dataclass
class AugmentConfig:
    weak_std: float = 0.05
    strong_std: float = 0.2
    strong_drop: float = 0.2
    n_weak: int = 2

    def __post_init__(self):
        if self.weak_std > self.strong_std:
            raise ValueError("weak noise scale must not exceed the strong one")
        if not 0.0 <= self.strong_drop < 1.0:
            raise ValueError("strong_drop must lie in [0, 1)")
        if self.n_weak < 1:
            raise ValueError("need at least one weak view")


@dataclass
class LossConfig:
    gamma_u: float = 2.0
    T_c: float = 0.07
    lam: float = 0.5
    mixup_alpha: float = 0.2
    mixup: bool = True
    mask: MaskConfig = field(default_factory=MaskConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    # ablation hooks: pin a mask to a constant instead of computing it
    force_w_id: float | None = None
    force_w_ood: float | None = None

    def __post_init__(self):
        if isinstance(self.mask, dict):
            self.mask = MaskConfig(**self.mask)
        if isinstance(self.augment, dict):
            self.augment = AugmentConfig(**self.augment)
        if self.gamma_u < 1:
            raise ValueError("gamma_u must be >= 1")
        if self.T_c <= 0 or self.lam < 0 or self.mixup_alpha <= 0:
            raise ValueError("need T_c > 0, lam >= 0, mixup_alpha > 0")


@dataclass
class BatchLossBreakdown:
    """Loss terms of one batch.

    The component fields are batch means of the *weighted* terms, so
    ``total == supervised + unsupervised + id_margin + ood_margin
    + lam * (contrastive_sup + contrastive_uns)``.
    """

    total: Value
    supervised: float
    unsupervised: float
    ood_margin: float
    id_margin: float
    contrastive_sup: float
    contrastive_uns: float
    mean_w_id: float
    mean_w_ood: float
    eta_id: float
    eta_ood: float
    tau_id: float
    tau_ood: float
    lam: float
    w_id: np.ndarray = field(repr=False, default=None)
    w_ood: np.ndarray = field(repr=False, default=None)
    energy: np.ndarray = field(repr=False, default=None)
    sup_loss: np.ndarray = field(repr=False, default=None)

    def recombine(self) -> float:
        return (self.supervised + self.unsupervised + self.id_margin + self.ood_margin
                + self.lam * (self.contrastive_sup + self.contrastive_uns))


# -- augmentations -----------------------------------------------------------
def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def weak_view(x, seed, aug: AugmentConfig) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x + aug.weak_std * _rng(seed).standard_normal(x.shape)


def strong_view(x, seed, aug: AugmentConfig) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    rng = _rng(seed)
    noisy = x + aug.strong_std * rng.standard_normal(x.shape)
    keep = rng.random(x.shape) >= aug.strong_drop
    return noisy * keep


def mixup_pair(x_a, y_a, x_b, y_b, alpha: float, seed=None, lam: float | None = None):
    """Convex combination with weight ``lam ~ Beta(alpha, alpha)`` unless given."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if lam is None:
        lam = float(_rng(seed).beta(alpha, alpha))
    x_mix = lam * np.asarray(x_a, dtype=np.float64) + (1.0 - lam) * np.asarray(x_b, dtype=np.float64)
    y_mix = lam * np.asarray(y_a, dtype=np.float64) + (1.0 - lam) * np.asarray(y_b, dtype=np.float64)
    return x_mix, y_mix


# -- pseudo-labels -------------------------------------------------------------
def sharpen(probs, gamma_u: float) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64) ** gamma_u
    return p / p.sum(axis=-1, keepdims=True)


def pseudo_label(model: AeonModel, x, n_aug: int, gamma_u: float, seed, aug: AugmentConfig) -> np.ndarray:
    """Sharpened mean prediction over ``n_aug`` weak views; a constant target."""
    rng = _rng(seed)
    mean = sum(model.predict_proba(weak_view(x, rng, aug)) for _ in range(n_aug)) / n_aug
    return sharpen(mean, gamma_u)


# -- loss terms ------------------------------------------------------------------
def log_softmax(logits) -> Value:
    logits = as_value(logits)
    return logits - logsumexp(logits, axis=-1, keepdims=True)


def supervised_loss(logits, target) -> Value:
    """Cross-entropy against a one-hot (or mixed) label vector, per row."""
    return -(log_softmax(logits) * np.asarray(target, dtype=np.float64)).sum(axis=-1)


def unsupervised_loss(logits, q_hat) -> Value:
    return supervised_loss(logits, q_hat)


def energy_margin_losses(E, m_id: float, m_ood: float) -> tuple[Value, Value]:
    """Squared hinges ``max(0, E - m_id)^2`` and ``max(0, m_ood - E)^2``."""
    E = as_value(E)
    return max0(E - m_id) ** 2, max0(m_ood - E) ** 2


def similarity_from_embeddings(z_weak, z_strong, T_c: float) -> Value:
    return (as_value(z_weak) @ as_value(z_strong).T) / T_c


def similarity_matrix(model: AeonModel, x, T_c: float, seed, aug: AugmentConfig) -> Value:
    """S[i, j] = <g(weak_i), g(strong_j)> / T_c."""
    rng = _rng(seed)
    xw = weak_view(x, rng, aug)
    xs = strong_view(x, rng, aug)
    return similarity_from_embeddings(model.projection(xw), model.projection(xs), T_c)


def contrastive_losses(S, labels) -> tuple[Value, Value]:
    """Per-row supervised (same-label positives) and instance contrastive losses."""
    S = as_value(S)
    labels = np.asarray(labels)
    n = S.shape[0]
    lse = logsumexp(S, axis=1)
    positives = labels[:, None] == labels[None, :]
    sup = lse - logsumexp(S, axis=1, mask=positives)
    uns = lse - S[np.arange(n), np.arange(n)]
    return sup, uns


def one_hot(labels, num_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), np.asarray(labels)] = 1.0
    return out


# -- full batch objective -------------------------------------------------------
def batch_loss(model: AeonModel, x, labels, est_id: NoiseRateEstimator, est_ood: NoiseRateEstimator,
               cfg: LossConfig, seed, frozen: dict | None = None) -> BatchLossBreakdown:
    """Masked multi-term objective of one batch; ``total`` is the tape root.

    All randomness (mixup weight/partner, weak/strong views) comes from ``seed``
    in a fixed draw order. ``frozen`` may pin ``stats_E``, ``stats_L`` and
    ``q_hat`` to given values, e.g. for finite-difference checks.
    """
    frozen = frozen or {}
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(x)
    if n == 0:
        raise ValueError("empty batch")
    C = model.config.num_classes
    mc, aug = cfg.mask, cfg.augment
    rng = _rng(seed)
    Y = one_hot(labels, C)

    # fixed draw order: mixup, pseudo-label views, contrastive views
    if cfg.mixup:
        lam_m = float(rng.beta(cfg.mixup_alpha, cfg.mixup_alpha))
        perm = rng.permutation(n)
        x_mix, y_mix = mixup_pair(x, Y, x[perm], Y[perm], cfg.mixup_alpha, lam=lam_m)
    else:
        x_mix, y_mix = x, Y
    q_hat = pseudo_label(model, x, aug.n_weak, cfg.gamma_u, rng, aug)
    xw = weak_view(x, rng, aug)
    xs = strong_view(x, rng, aug)
    if "q_hat" in frozen:
        q_hat = frozen["q_hat"]

    # one encoder pass over the stacked inputs
    feats = model.features(np.concatenate([x, x_mix, xw, xs]))
    logits_all = model.head(feats[: 2 * n])
    logits, logits_mix = logits_all[:n], logits_all[n:]
    z = model.project(feats[2 * n:])
    S = similarity_from_embeddings(z[:n], z[n:], cfg.T_c)

    E = energy_score(logits, mc.T_E)
    ls_raw = supervised_loss(logits, Y)
    ls_mix = supervised_loss(logits_mix, y_mix) if cfg.mixup else ls_raw
    lu = unsupervised_loss(logits, q_hat)
    id_m, ood_m = energy_margin_losses(E, mc.m_id, mc.m_ood)
    c_sup, c_uns = contrastive_losses(S, labels)

    eta_ood = estimate_rate(est_ood)
    eta_id = estimate_rate(est_id)
    stats_E: BatchStats = frozen.get("stats_E") or batch_stats(E)
    stats_L: BatchStats = frozen.get("stats_L") or batch_stats(ls_raw)
    if mc.detach_stats:
        tau_ood = adaptive_threshold(eta_ood, stats_E, mc.eta_eps)
        tau_id = adaptive_threshold(eta_id, stats_L, mc.eta_eps)
    else:
        tau_ood = attached_threshold(eta_ood, E, mc.eta_eps)
        tau_id = attached_threshold(eta_id, ls_raw, mc.eta_eps)
    w_ood = Value(np.full(n, cfg.force_w_ood)) if cfg.force_w_ood is not None \
        else soft_mask(tau_ood, E.detach() if mc.detach_scores else E, mc.beta_ood)
    w_id = Value(np.full(n, cfg.force_w_id)) if cfg.force_w_id is not None \
        else soft_mask(tau_id, ls_raw.detach() if mc.detach_scores else ls_raw, mc.beta_id)

    t_sup = w_ood * w_id * ls_mix
    t_uns = w_ood * (1.0 - w_id) * lu
    t_idm = w_ood * id_m
    t_oodm = (1.0 - w_ood) * ood_m
    per_sample = t_sup + t_uns + t_idm + t_oodm + cfg.lam * (c_sup + c_uns)
    total = per_sample.mean()

    return BatchLossBreakdown(
        total=total,
        supervised=float(t_sup.data.mean()),
        unsupervised=float(t_uns.data.mean()),
        ood_margin=float(t_oodm.data.mean()),
        id_margin=float(t_idm.data.mean()),
        contrastive_sup=float(c_sup.data.mean()),
        contrastive_uns=float(c_uns.data.mean()),
        mean_w_id=float(w_id.data.mean()),
        mean_w_ood=float(w_ood.data.mean()),
        eta_id=float(eta_id.data),
        eta_ood=float(eta_ood.data),
        tau_id=float(tau_id.data),
        tau_ood=float(tau_ood.data),
        lam=cfg.lam,
        w_id=w_id.data.copy(),
        w_ood=w_ood.data.copy(),
        energy=E.data.copy(),
        sup_loss=ls_raw.data.copy(),
    )


def batch_frozen_parts(model: AeonModel, x, labels, est_id, est_ood, cfg: LossConfig, seed) -> dict:
    """Batch statistics and pseudo-labels of one evaluation, for pinning via ``frozen``."""
    rng = _rng(seed)
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if cfg.mixup:
        rng.beta(cfg.mixup_alpha, cfg.mixup_alpha)
        rng.permutation(n)
    q_hat = pseudo_label(model, x, cfg.augment.n_weak, cfg.gamma_u, rng, cfg.augment)
    logits = model.predict_logits(x)
    E = energy_score(logits, cfg.mask.T_E).data
    ls = supervised_loss(logits, one_hot(labels, model.config.num_classes)).data
    return {"q_hat": q_hat, "stats_E": batch_stats(E), "stats_L": batch_stats(ls)}


def plain_ce_loss(model: AeonModel, x, labels) -> Value:
    """Mean cross-entropy with the given labels (warm-up / CE baseline)."""
    logits = model.logits(np.asarray(x, dtype=np.float64))
    return supervised_loss(logits, one_hot(labels, model.config.num_classes)).mean()


__all__ = [
    "AugmentConfig", "LossConfig", "BatchLossBreakdown", "weak_view", "strong_view", "mixup_pair",
    "sharpen", "pseudo_label", "supervised_loss", "unsupervised_loss", "energy_margin_losses",
    "similarity_matrix", "similarity_from_embeddings", "contrastive_losses", "batch_loss",
    "batch_frozen_parts", "plain_ce_loss", "one_hot", "log_softmax",
]
