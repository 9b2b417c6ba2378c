"""Monte-Carlo check that leverage-sampled node sets have small input information loss."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import pruning as _pruning
from ..covariance import HiddenCovariance
from .spectral import degrees_of_freedom, leverage_scores, solve_lambda

__all__ = ["Prop2Result", "check_prop2", "sampled_loss"]


@dataclass
class Prop2Result:
    lam: float
    loss_cap: float
    m_sharp: int
    delta_tilde: float
    dof: float = math.nan
    losses: list[float] = field(default_factory=list)
    set_sizes: list[int] = field(default_factory=list)

    @property
    def trials(self) -> int:
        return len(self.losses)

    @property
    def successes(self) -> list[bool]:
        return [loss <= self.loss_cap for loss in self.losses]

    @property
    def success_rate(self) -> float:
        return sum(self.successes) / self.trials if self.trials else float("nan")

    @property
    def dof_scaled_success_rate(self) -> float:
        """Share of trials with ``L^A <= 4 lambda N(lambda)``.

        Summing the per-coordinate sampling bound over all nodes gives this cap;
        it coincides with ``4 lambda`` only when ``N(lambda) <= 1``.
        """
        cap = self.loss_cap * self.dof
        return sum(loss <= cap for loss in self.losses) / self.trials if self.trials else float("nan")

    @property
    def collisions(self) -> int:
        """Total number of repeated draws across all trials."""
        return sum(self.m_sharp - s for s in self.set_sizes)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "loss_cap": self.loss_cap,
            "m_sharp": self.m_sharp,
            "delta_tilde": self.delta_tilde,
            "success_rate": self.success_rate,
            "dof": self.dof,
            "dof_scaled_success_rate": self.dof_scaled_success_rate,
            "collisions": self.collisions,
            "losses": self.losses,
            "set_sizes": self.set_sizes,
        }


def sampled_loss(cov: HiddenCovariance, j, lam: float, m_sharp: int) -> float:
    """Input information loss of ``J`` with ridge ``lambda * m_sharp * tau'_J``.

    ``m_sharp`` is the nominal number of draws, so duplicates shrink ``J``
    without shrinking the ridge weights.
    """
    scores = leverage_scores(cov, lam)
    cols = sorted(j)
    return _pruning.ridge_input_loss(cov, cols, lam * m_sharp * scores[cols])


def check_prop2(cov: HiddenCovariance, m_sharp: int, delta_tilde: float, trials: int, seed: int) -> Prop2Result:
    """Sample ``trials`` node sets from the leverage distribution and test ``L^A <= 4 lambda``.

    Each trial uses its own child seed, so any single trial can be replayed.
    """
    lam = solve_lambda(cov, m_sharp, delta_tilde)
    if not math.isfinite(lam):
        raise ValueError(
            f"no lambda in the search bracket satisfies the sample-size condition for m_sharp={m_sharp}, "
            f"delta_tilde={delta_tilde}"
        )
    q = leverage_scores(cov, lam)
    cdf = np.cumsum(q)
    cdf[-1] = 1.0
    result = Prop2Result(lam=lam, loss_cap=4.0 * lam, m_sharp=m_sharp, delta_tilde=delta_tilde,
                         dof=degrees_of_freedom(cov, lam))
    for child in np.random.SeedSequence(seed).spawn(trials):
        rng = np.random.default_rng(child)
        draws = np.minimum(np.searchsorted(cdf, rng.random(m_sharp), side="right"), q.size - 1)
        j = sorted({int(d) for d in draws})
        result.losses.append(sampled_loss(cov, j, lam, m_sharp))
        result.set_sizes.append(len(j))
    return result
