"""Learnable noise-rate estimators, energy scores, adaptive thresholds and soft masks."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import DomainError, Value, as_value, clip, erfinv, logsumexp, sigmoid

VAR_EPS = 1e-8
# keeps masks strictly inside (0, 1); float64 sigmoid saturates to 1.0 past ~37
MASK_EPS = 1e-12
SQRT2 = math.sqrt(2.0)


@dataclass
class MaskConfig:
    beta_id: float = 0.1
    beta_ood: float = 0.1
    m_id: float = 0.2
    m_ood: float = 0.8
    T_E: float = 1.0
    eta_eps: float = 1e-3
    detach_stats: bool = True
    detach_scores: bool = True

    def __post_init__(self):
        if self.beta_id <= 0 or self.beta_ood <= 0:
            raise ValueError("sigmoid sharpness beta must be positive")
        if self.T_E <= 0:
            raise ValueError("energy temperature T_E must be positive")
        if not 0 < self.eta_eps < 0.5:
            raise ValueError("eta_eps must lie in (0, 0.5)")


class NoiseRateEstimator:
    """Noise rate ``sigmoid(gamma / T)`` with a trainable scalar ``gamma``."""

    def __init__(self, gamma: float = 0.0, T: float = 10.0):
        if T <= 0:
            raise ValueError("temperature must be positive")
        self.gamma = Value(float(gamma), requires_grad=True)
        self.T = float(T)

    def estimate(self) -> Value:
        return estimate_rate(self)

    @property
    def rate(self) -> float:
        return float(estimate_rate(self).data)

    def __repr__(self) -> str:
        return f"NoiseRateEstimator(gamma={float(self.gamma.data):.6g}, T={self.T:g}, rate={self.rate:.4f})"


def estimate_rate(est: NoiseRateEstimator) -> Value:
    return sigmoid(est.gamma / est.T)


def energy_score(logits, T_E: float = 1.0) -> Value:
    """``-T_E * logsumexp(logits / T_E)`` over the last axis."""
    logits = as_value(logits)
    if logits.shape[-1] < 1:
        raise ValueError("need at least one logit")
    return -T_E * logsumexp(logits / T_E, axis=-1)


@dataclass(frozen=True)
class BatchStats:
    mean: float
    var: float
    detached: bool = True

    @property
    def std(self) -> float:
        return math.sqrt(max(self.var, VAR_EPS))


def batch_stats(scores) -> BatchStats:
    """Population mean/variance; never part of the gradient graph."""
    s = np.asarray(scores.data if isinstance(scores, Value) else scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("batch statistics of an empty batch")
    mu = float(s.mean())
    return BatchStats(mu, float(((s - mu) ** 2).mean()))


def gaussian_quantile(p, mean: float = 0.0, var: float = 1.0) -> Value:
    """Inverse Gaussian CDF at ``p`` for N(mean, var); differentiable in ``p``.

    d/dp = sigma / phi(z), which is exactly what the erfinv chain produces.
    """
    p = as_value(p)
    if np.any(p.data <= 0.0) or np.any(p.data >= 1.0):
        raise DomainError("quantile level must be strictly inside (0, 1)")
    sigma = math.sqrt(max(var, VAR_EPS))
    return mean + (sigma * SQRT2) * erfinv(2.0 * p - 1.0)


def normal_cdf(z):
    from scipy.special import erf
    return 0.5 * (1.0 + erf(np.asarray(z) / SQRT2))


def adaptive_threshold(eta, stats: BatchStats, eta_eps: float = 1e-3) -> Value:
    """Score level above which a fraction ``eta`` of N(mean, var) mass lies."""
    eta = clip(as_value(eta), eta_eps, 1.0 - eta_eps)
    return gaussian_quantile(1.0 - eta, stats.mean, stats.var)


def attached_threshold(eta, scores: Value, eta_eps: float = 1e-3) -> Value:
    """Like :func:`adaptive_threshold` with mean and variance left on the tape."""
    eta = clip(as_value(eta), eta_eps, 1.0 - eta_eps)
    mu = scores.mean()
    var = ((scores - mu) ** 2).mean()
    sigma = (var + VAR_EPS) ** 0.5
    return mu + sigma * SQRT2 * erfinv(1.0 - 2.0 * eta)


def soft_mask(tau, score, beta: float) -> Value:
    """``sigmoid((tau - score) / beta)``: near 1 well below the threshold."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    return clip(sigmoid((as_value(tau) - score) / beta), MASK_EPS, 1.0 - MASK_EPS)
