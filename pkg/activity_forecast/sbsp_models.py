"""SB-SP Bernoulli and Geometric models: marginals, posterior, predictive law.

Both models share the posterior of the latent largest-jump transform

    Δ^(-α) | data ~ Gamma(N_d + c + 1, β + γ_0^d)

and hence the same negative binomial law for the number of new users
over a future horizon.  They differ only in the per-user factor of the
marginal likelihood and in the Beta laws of the seen users' jumps.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np
from scipy import special

from activity_forecast.data_model import ModelKind, SufficientStats
from activity_forecast.errors import DomainError
from activity_forecast.sampling import NegBinLaw, RngStream, sample_beta
from activity_forecast.special_functions import gamma_accum, gamma_accum_path
from activity_forecast.types import HyperParamsJson

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HyperParams:
    """SB-SP hyperparameters.

    Attributes:
        alpha: Stability index in ``(0, 1)``.
        c: Concentration, ``> 0``.
        beta: Rate of the largest-jump mixing density, ``> 0``.
    """

    alpha: float
    c: float
    beta: float

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if not (self.c > 0.0 and math.isfinite(self.c)):
            raise DomainError(f"c must be positive and finite, got {self.c!r}")
        if not (self.beta > 0.0 and math.isfinite(self.beta)):
            raise DomainError(f"beta must be positive and finite, got {self.beta!r}")

    def to_dict(self) -> HyperParamsJson:
        return {"alpha": float(self.alpha), "c": float(self.c), "beta": float(self.beta)}

    @classmethod
    def from_dict(cls, raw: Dict[str, float]) -> "HyperParams":
        missing = {"alpha", "c", "beta"} - set(raw)
        if missing:
            raise DomainError(f"hyperparameters missing {sorted(missing)}")
        return cls(alpha=float(raw["alpha"]), c=float(raw["c"]), beta=float(raw["beta"]))


@dataclass(frozen=True)
class PosteriorState:
    """Posterior of ``Δ^(-α)``: ``Gamma(delta_shape, delta_rate)``.

    Build it with :func:`posterior`.
    """

    hyper: HyperParams
    stats: SufficientStats
    gamma_d: float
    delta_shape: float
    delta_rate: float

    @property
    def d(self) -> int:
        return self.stats.d

    @property
    def n_users(self) -> int:
        return self.stats.n_users

    @property
    def delta_mean(self) -> float:
        """Posterior mean of ``Δ^(-α)``."""
        return self.delta_shape / self.delta_rate


def _log_rising(c: float, n: int) -> float:
    """``ln Γ(n+c+1) − ln Γ(c+1) = Σ_{k=1..n} ln(c+k)``."""
    if n == 0:
        return 0.0
    k = np.arange(1, n + 1, dtype=float)
    if c >= 1.0:
        return float(n * math.log(c) + np.log1p(k / c).sum())
    return float(np.log(c + k).sum())


def _log_prefactor(n_users: int, d: int, hyper: HyperParams) -> float:
    """Terms of the marginal shared by both models.

    ``(c+1) ln β − (N+c+1) ln(β+γ_d)`` is carried as
    ``−(c+1) ln(1 + γ_d/β) − N ln(β+γ_d)`` so no two terms of order ``c``
    cancel at large ``c`` and ``β``.
    """
    gamma_d = gamma_accum(hyper.alpha, 0, d)
    return (
        n_users * math.log(hyper.alpha)
        - (hyper.c + 1.0) * math.log1p(gamma_d / hyper.beta)
        - n_users * math.log(hyper.beta + gamma_d)
        + _log_rising(hyper.c, n_users)
    )


def _require_kind(stats: SufficientStats, kind: ModelKind) -> None:
    if stats.kind is not kind:
        raise DomainError(f"expected {kind.value} statistics, got {stats.kind.value}")


def log_marginal_bernoulli(stats: SufficientStats, hyper: HyperParams) -> float:
    """Log marginal probability of daily activity under the Bernoulli model.

    ``N log α + (c+1) log β − (N+c+1) log(β+γ_d) + ln Γ(N+c+1) − ln Γ(c+1)
    + Σ_i ln B(M_i − α, d − M_i + 1)``.
    """
    _require_kind(stats, ModelKind.BERNOULLI)
    m = stats.counts.astype(float)
    per_user = special.betaln(m - hyper.alpha, stats.d - m + 1.0)
    return float(_log_prefactor(stats.n_users, stats.d, hyper) + math.fsum(per_user.tolist()))


def log_marginal_geometric(stats: SufficientStats, hyper: HyperParams) -> float:
    """Log marginal probability of first-trigger days under the Geometric model.

    Same prefactor as the Bernoulli model with ``Σ_i ln B(1 − α, Y_i)``.
    """
    _require_kind(stats, ModelKind.GEOMETRIC)
    per_user = special.betaln(1.0 - hyper.alpha, stats.counts.astype(float))
    return float(_log_prefactor(stats.n_users, stats.d, hyper) + math.fsum(per_user.tolist()))


def log_marginal(stats: SufficientStats, hyper: HyperParams) -> float:
    """Dispatch to the marginal matching ``stats.kind``."""
    if stats.kind is ModelKind.BERNOULLI:
        return log_marginal_bernoulli(stats, hyper)
    return log_marginal_geometric(stats, hyper)


def posterior(stats: SufficientStats, hyper: HyperParams) -> PosteriorState:
    gamma_d = gamma_accum(hyper.alpha, 0, stats.d)
    return PosteriorState(
        hyper=hyper,
        stats=stats,
        gamma_d=gamma_d,
        delta_shape=stats.n_users + hyper.c + 1.0,
        delta_rate=hyper.beta + gamma_d,
    )


def sample_seen_user_jumps(post: PosteriorState, rng: RngStream) -> np.ndarray:
    """Draw the posterior jump of every observed user.

    Bernoulli: ``Beta(M_i − α, d − M_i + 1)``; Geometric: ``Beta(1 − α, Y_i)``.
    """
    counts = post.stats.counts.astype(float)
    if counts.size == 0:
        return np.empty(0, dtype=float)
    alpha = post.hyper.alpha
    if post.stats.kind is ModelKind.BERNOULLI:
        a, b = counts - alpha, post.d - counts + 1.0
    else:
        a, b = np.full_like(counts, 1.0 - alpha), counts
    return np.atleast_1d(sample_beta(a, b, rng))


def predict_new_users_law(post: PosteriorState, horizon_D: int) -> NegBinLaw:
    """Posterior predictive law of the number of new users over ``horizon_D`` days.

    ``NegBin(N_d + c + 1, (β + γ_0^d) / (β + γ_0^d + γ_d^D))``, identical
    for both models.

    Raises:
        DomainError: If ``horizon_D < 1``.
    """
    if horizon_D < 1:
        raise DomainError(f"horizon must be >= 1 day, got {horizon_D}")
    gamma_future = gamma_accum(post.hyper.alpha, post.d, horizon_D)
    p = post.delta_rate / (post.delta_rate + gamma_future)
    return NegBinLaw(r=post.delta_shape, p=p)


def predictive_trajectory_means(post: PosteriorState, horizon_D: int) -> np.ndarray:
    """Posterior mean of the cumulative user count on days ``d+1 .. d+horizon_D``."""
    if horizon_D < 1:
        raise DomainError(f"horizon must be >= 1 day, got {horizon_D}")
    path = gamma_accum_path(post.hyper.alpha, post.d, horizon_D)
    return post.n_users + post.delta_mean * path


def posterior_predictive_quantiles(
    post: PosteriorState,
    horizon_D: int,
    probs: Sequence[float] = (0.05, 0.5, 0.95),
) -> Dict[float, int]:
    """Quantiles of the new-user count, keyed by probability."""
    law = predict_new_users_law(post, horizon_D)
    return {float(q): int(law.quantile(q)) for q in probs}
