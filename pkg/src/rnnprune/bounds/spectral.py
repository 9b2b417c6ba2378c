"""Spectral quantities of the hidden covariance: degrees of freedom, leverage scores, lambda, sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import linalg
from ..covariance import HiddenCovariance

__all__ = [
    "SpectralProfile",
    "profile_of",
    "degrees_of_freedom",
    "leverage_scores",
    "lambda_condition",
    "solve_lambda",
    "sample_index_set",
]

LAMBDA_LO = 1e-12
LAMBDA_HI = 1e6
BISECT_REL_TOL = 1e-9


@dataclass(frozen=True)
class SpectralProfile:
    """Descending eigenvalues ``mu`` and eigenvectors ``u`` (columns) of the covariance."""

    mu: np.ndarray
    u: np.ndarray

    @property
    def m(self) -> int:
        return self.mu.size

    @property
    def mu_max(self) -> float:
        return float(self.mu[0]) if self.mu.size else 0.0

    def dof_curve(self, lambdas) -> list[tuple[float, float]]:
        return [(float(lam), degrees_of_freedom(self, lam)) for lam in lambdas]


def profile_of(source) -> SpectralProfile:
    if isinstance(source, SpectralProfile):
        return source
    if isinstance(source, HiddenCovariance):
        eig = source.eig()
    elif isinstance(source, linalg.SymEig):
        eig = source
    else:
        eig = linalg.psd_eig(source)
    return SpectralProfile(np.maximum(eig.eigenvalues, 0.0), eig.eigenvectors)


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not lam > 0.0:
        raise ValueError(f"lambda must be positive, got {lam}")
    return lam


def degrees_of_freedom(source, lam: float) -> float:
    """``N(lambda) = sum_j mu_j / (mu_j + lambda)``."""
    lam = _check_lambda(lam)
    mu = profile_of(source).mu
    return float(np.sum(mu / (mu + lam)))


def leverage_scores(source, lam: float) -> np.ndarray:
    """``tau'_k = [Sigma (Sigma + lambda I)^-1]_kk / N(lambda)``, a probability vector over nodes."""
    lam = _check_lambda(lam)
    prof = profile_of(source)
    weights = prof.mu / (prof.mu + lam)
    total = float(weights.sum())
    if not total > 0.0:
        raise ValueError("leverage scores are undefined for an all-zero spectrum")
    raw = (prof.u**2) @ weights
    return raw / raw.sum()


def lambda_condition(source, lam: float, m_sharp: int, delta: float) -> bool:
    """Whether ``m_sharp >= 5 N log(16 N / delta)`` holds (trivially true when ``N = 0``)."""
    dof = degrees_of_freedom(source, lam)
    if dof <= 0.0:
        return True
    return m_sharp >= 5.0 * dof * math.log(16.0 * dof / delta)


def solve_lambda(source, m_sharp: int, delta: float) -> float:
    """Smallest ``lambda`` satisfying the sample-size condition, found by bisection on ``log lambda``.

    The bracket is ``[1e-12, 1e6] * mu_max``. The map ``N -> 5 N log(16 N / delta)``
    is increasing for every ``N > delta / (16 e)`` and ``N`` decreases in
    ``lambda``, so the condition is monotone over the bracket and bisection is
    valid throughout it. Returns ``inf`` if even the top of the bracket fails.
    """
    if not 0.0 < delta < 0.5:
        raise ValueError(f"delta must lie in (0, 1/2), got {delta}")
    if m_sharp < 1:
        raise ValueError("m_sharp must be >= 1")
    prof = profile_of(source)
    scale = prof.mu_max if prof.mu_max > 0.0 else 1.0
    lo, hi = LAMBDA_LO * scale, LAMBDA_HI * scale

    def ok(lam):
        return lambda_condition(prof, lam, m_sharp, delta)

    if ok(lo):
        return lo
    if not ok(hi):
        return math.inf
    log_lo, log_hi = math.log(lo), math.log(hi)
    while log_hi - log_lo > BISECT_REL_TOL:
        mid = 0.5 * (log_lo + log_hi)
        if ok(math.exp(mid)):
            log_hi = mid
        else:
            log_lo = mid
    return math.exp(log_hi)


def sample_index_set(source, lam: float, m_sharp: int, seed) -> tuple[tuple[int, ...], np.ndarray]:
    """Draw ``m_sharp`` node ids i.i.d. from the leverage distribution.

    Returns the deduplicated sorted set together with the raw draws.
    """
    q = leverage_scores(source, lam)
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(q)
    cdf[-1] = 1.0
    draws = np.searchsorted(cdf, rng.random(m_sharp), side="right")
    draws = np.minimum(draws, q.size - 1)
    return tuple(sorted({int(d) for d in draws})), draws
