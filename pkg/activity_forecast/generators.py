"""Synthetic activity data.

* Prior generative schemes of the Bernoulli and Geometric SB-SP models.
* DG1 (Bernoulli prior with a random ``α``) and DG2 (geometric triggers
  followed by fading activity).
* A Zipfian population where user ``i`` is active on any day with
  probability ``i^(-γ)``.
* The two-parameter IBP sequential scheme, for baseline studies.

Every generator draws through an :class:`~activity_forecast.sampling.RngStream`.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy import special, stats

from activity_forecast.baselines import IbpParams
from activity_forecast.data_model import ActivityMatrix, TriggerData
from activity_forecast.errors import DomainError
from activity_forecast.sampling import (
    NegBinLaw,
    RngStream,
    sample_beta,
    sample_categorical_logw,
    sample_negbin,
    sample_poisson,
)
from activity_forecast.sbsp_models import HyperParams
from activity_forecast.special_functions import gamma_accum

logger = logging.getLogger(__name__)

DG1_C = 2500.0
DG1_BETA = 0.5
DG1_ALPHA_PRIOR = (4.0, 10.0)
DG2_EPSILON_MAX = 0.5


@dataclass(frozen=True)
class ZipfPopulation:
    """Pool of ``pool_size`` users; user ``i`` is active daily w.p. ``i^(-tail_gamma)``."""

    pool_size: int
    tail_gamma: float

    def __post_init__(self) -> None:
        if self.pool_size < 1:
            raise DomainError(f"pool_size must be >= 1, got {self.pool_size}")
        if not self.tail_gamma > 0.0:
            raise DomainError(f"tail_gamma must be positive, got {self.tail_gamma!r}")

    @property
    def daily_probs(self) -> np.ndarray:
        return np.arange(1, self.pool_size + 1, dtype=float) ** -self.tail_gamma

    def expected_observed(self, days: int) -> float:
        """``E[N_d] = Σ_i 1 − (1 − p_i)^d``."""
        return float(np.sum(1.0 - (1.0 - self.daily_probs) ** days))


def _check_days(days: int) -> None:
    if days < 1:
        raise DomainError(f"days must be >= 1, got {days}")


def _user_id(prefix: str, index: int) -> str:
    return f"{prefix}{index:07d}"


def _step_law(hyper: HyperParams, seen: int, prev_days: int) -> NegBinLaw:
    """Law of the new users on day ``prev_days + 1`` given ``seen`` users so far."""
    gamma_prev = gamma_accum(hyper.alpha, 0, prev_days) if prev_days else 0.0
    rate = hyper.beta + gamma_prev
    step = gamma_accum(hyper.alpha, prev_days, 1)
    return NegBinLaw(r=seen + hyper.c + 1.0, p=rate / (rate + step))


def generate_bernoulli_prior(hyper: HyperParams, days: int, rng: RngStream) -> ActivityMatrix:
    """Simulate daily activity from the Bernoulli SB-SP prior, day by day.

    On day ``j`` every user seen before is active with probability
    ``(m_i − α) / (j − α)``, ``m_i`` being their active days so far, and
    a negative binomial number of new users arrives, each active on
    their arrival day.
    """
    _check_days(days)
    alpha = hyper.alpha
    counts = np.empty(0, dtype=np.int64)
    active: List[List[int]] = []
    for j in range(1, days + 1):
        if counts.size:
            probs = (counts - alpha) / (j - alpha)
            flips = rng.generator.random(counts.size) < probs
            for i in np.flatnonzero(flips):
                active[i].append(j)
            counts = counts + flips
        k = sample_negbin(_step_law(hyper, counts.size, j - 1), rng)
        if k:
            counts = np.concatenate([counts, np.ones(k, dtype=np.int64)])
            active.extend([j] for _ in range(k))
    users = tuple((_user_id("u", i + 1), tuple(days_i)) for i, days_i in enumerate(active))
    logger.debug("Bernoulli prior: %d users over %d days", len(users), days)
    return ActivityMatrix(d=days, users=users)


def generate_geometric_prior(hyper: HyperParams, days: int, rng: RngStream) -> TriggerData:
    """Simulate first-trigger days from the Geometric SB-SP prior.

    ``K ~ NegBin(c + 1, β / (β + γ_0^days))`` users, each with an i.i.d.
    trigger day drawn with probability proportional to ``B(1 − α, y)``.
    """
    _check_days(days)
    gamma_total = gamma_accum(hyper.alpha, 0, days)
    k = sample_negbin(NegBinLaw(r=hyper.c + 1.0, p=hyper.beta / (hyper.beta + gamma_total)), rng)
    if k == 0:
        return TriggerData(d=days, triggers=())
    log_weights = special.betaln(1.0 - hyper.alpha, np.arange(1, days + 1, dtype=float))
    first = 1 + np.asarray(sample_categorical_logw(log_weights, rng, size=k))
    return TriggerData(
        d=days,
        triggers=tuple((_user_id("g", i + 1), int(y)) for i, y in enumerate(first)),
    )


def generate_dg1(days: int, rng: RngStream, c: float = DG1_C, beta: float = DG1_BETA,
                 alpha_prior: Tuple[float, float] = DG1_ALPHA_PRIOR,
                 ) -> Tuple[ActivityMatrix, HyperParams]:
    """DG1: draw ``α ~ Beta(*alpha_prior)`` then Bernoulli-prior activity.

    Returns:
        The data and the hyperparameters that generated it.
    """
    alpha = sample_beta(alpha_prior[0], alpha_prior[1], rng)
    hyper = HyperParams(alpha=alpha, c=c, beta=beta)
    return generate_bernoulli_prior(hyper, days, rng), hyper


def generate_dg2(hyper: HyperParams, days: int, rng: RngStream) -> ActivityMatrix:
    """DG2: geometric-prior triggers followed by fading activity.

    User ``i`` is active on its trigger day ``Y_i``, never before, and
    on each later day with probability ``ε_i (1 − α) / (1 − α + Y_i)``
    where ``ε_i ~ Uniform(0, 0.5)``.
    """
    triggers = generate_geometric_prior(hyper, days, rng)
    first = triggers.first_days()
    if first.size == 0:
        return ActivityMatrix(d=days, users=())
    eps = rng.generator.uniform(0.0, DG2_EPSILON_MAX, size=first.size)
    rate = eps * (1.0 - hyper.alpha) / (1.0 - hyper.alpha + first)
    day_grid = np.arange(1, days + 1)
    coins = rng.generator.random((first.size, days)) < rate[:, None]
    active = (day_grid[None, :] == first[:, None]) | ((day_grid[None, :] > first[:, None]) & coins)
    users = tuple(
        (user_id, tuple(int(x) for x in day_grid[row]))
        for (user_id, _), row in zip(triggers.triggers, active)
    )
    return ActivityMatrix(d=days, users=users)


def zipf_first_days(pop: ZipfPopulation, rng: RngStream) -> np.ndarray:
    """First active day of every pool member (``Geometric(p_i)``, 1-based)."""
    return rng.generator.geometric(pop.daily_probs)


def generate_zipf(pop: ZipfPopulation, days: int, rng: RngStream) -> ActivityMatrix:
    """Simulate ``days`` days of the Zipfian population.

    First activity days are drawn for the whole pool at once; only users
    whose first day falls within the window get further daily coin flips.
    """
    _check_days(days)
    first = zipf_first_days(pop, rng)
    seen = np.flatnonzero(first <= days)
    probs = pop.daily_probs[seen]
    day_grid = np.arange(1, days + 1)
    coins = rng.generator.random((seen.size, days)) < probs[:, None]
    first_seen = first[seen]
    active = (day_grid[None, :] == first_seen[:, None]) | (
        (day_grid[None, :] > first_seen[:, None]) & coins
    )
    users = tuple(
        (_user_id("z", int(i) + 1), tuple(int(x) for x in day_grid[row]))
        for i, row in zip(seen, active)
    )
    logger.debug("Zipf(gamma=%.2f): %d of %d users active over %d days",
                 pop.tail_gamma, len(users), pop.pool_size, days)
    return ActivityMatrix(d=days, users=users)


def generate_ibp(params: IbpParams, days: int, rng: RngStream) -> ActivityMatrix:
    """Two-parameter IBP: on day ``j`` a user with ``m`` active days is
    active w.p. ``m / (c + j − 1)``; ``Poisson(θ c / (c + j − 1))`` new users."""
    _check_days(days)
    counts = np.empty(0, dtype=np.int64)
    active: List[List[int]] = []
    for j in range(1, days + 1):
        denom = params.c + j - 1.0
        if counts.size:
            flips = rng.generator.random(counts.size) < counts / denom
            for i in np.flatnonzero(flips):
                active[i].append(j)
            counts = counts + flips
        k = sample_poisson(params.theta * params.c / denom, rng)
        if k:
            counts = np.concatenate([counts, np.ones(k, dtype=np.int64)])
            active.extend([j] for _ in range(k))
    users = tuple((_user_id("b", i + 1), tuple(d_i)) for i, d_i in enumerate(active))
    return ActivityMatrix(d=days, users=users)


def log_sequential_probability_bernoulli(matrix: ActivityMatrix, hyper: HyperParams) -> float:
    """Log probability of ``matrix`` under the day-by-day Bernoulli scheme.

    Arrivals are labelled, so each day contributes ``log k_j!`` on top of
    the negative binomial pmf of its ``k_j`` new users.  Equals the log
    marginal of the Bernoulli model.
    """
    alpha = hyper.alpha
    first = {u: days[0] for u, days in matrix.users}
    day_sets = {u: set(days) for u, days in matrix.users}
    total = 0.0
    for j in range(1, matrix.d + 1):
        seen = [u for u in first if first[u] < j]
        for u in seen:
            m = sum(1 for x in day_sets[u] if x < j)
            q = (m - alpha) / (j - alpha)
            total += math.log(q) if j in day_sets[u] else math.log1p(-q)
        k = sum(1 for u in first if first[u] == j)
        law = _step_law(hyper, len(seen), j - 1)
        total += float(law.logpmf(k)) + math.lgamma(k + 1.0)
    return total


def log_compound_poisson_probability(data: TriggerData, hyper: HyperParams) -> float:
    """Log probability of ``data`` under the Geometric prior scheme.

    Count ``N ~ NegBin(c + 1, β/(β + γ_0^d))`` times ``N!`` labellings
    times i.i.d. trigger days with ``P(y) = α B(1 − α, y) / γ_0^d``.
    Equals the log marginal of the Geometric model.
    """
    alpha = hyper.alpha
    gamma_total = gamma_accum(alpha, 0, data.d)
    n = data.n_users
    log_count = stats.nbinom.logpmf(n, hyper.c + 1.0, hyper.beta / (hyper.beta + gamma_total))
    log_days = math.log(alpha) + special.betaln(1.0 - alpha, data.first_days().astype(float)) \
        - math.log(gamma_total)
    return float(log_count + math.lgamma(n + 1.0) + math.fsum(np.atleast_1d(log_days).tolist()))
