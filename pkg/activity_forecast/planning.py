"""How many more days until the user count reaches a target ``M``.

Three estimates of ``D_M`` are provided:

* :func:`point_estimate_dm` -- inverse regression on the posterior mean
  trajectory.
* :func:`global_band` + :func:`invert_band` -- a simultaneous credible
  band for the whole future trajectory, sliced at ``M``.
* :func:`posterior_dm` -- direct Monte Carlo from the posterior of
  ``D_M`` through the compound Poisson form of the new-user triggers.

:func:`ferguson_klass_new_measure` simulates the same new-user part of
the posterior jump by jump, in decreasing order.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import optimize, special, stats
from tenacity import (
    RetryError,
    Retrying,
    before_sleep_log,
    retry_if_exception_type,
    stop_after_attempt,
)

from activity_forecast.errors import (
    BandTooShortError,
    DomainError,
    HorizonTooShortError,
    NumericalError,
    PlanningError,
)
from activity_forecast.sampling import (
    RngStream,
    sample_categorical_logw,
    sample_gamma,
    sample_negbin,
    sample_poisson,
)
from activity_forecast.sbsp_models import (
    PosteriorState,
    predict_new_users_law,
    predictive_trajectory_means,
)
from activity_forecast.special_functions import stable_tail_integral
from activity_forecast.types import DayOrCensored, DmIntervalJson, Json

logger = logging.getLogger(__name__)

CENSORED = "censored"
DEFAULT_DAY_CAP = 3650
MAX_DOUBLINGS = 6
MIN_BAND_DRAWS = 100
MIN_POSTERIOR_DRAWS = 100
SAMPLERS = ("negbin", "ferguson-klass")

# Relative slack when comparing a posterior mean against an integer target.
_MEAN_RTOL = 1e-9

_ROOT_XTOL = 1e-15
_ROOT_RTOL = 1e-12
_ROOT_MAXITER = 200


def _day_or_censored(value: Optional[int]) -> DayOrCensored:
    return CENSORED if value is None else int(value)


@dataclass(frozen=True)
class CredibleBand:
    """Simultaneous credible band for the cumulative user count.

    Entry ``k`` of ``lo``/``mean``/``hi`` refers to day ``d + 1 + k``.
    """

    level: float
    d: int
    n_observed: int
    lo: np.ndarray
    hi: np.ndarray
    mean: np.ndarray
    trajectories_kept: int
    n_draws: int = 0

    def __post_init__(self) -> None:
        lo = np.asarray(self.lo, dtype=np.int64)
        hi = np.asarray(self.hi, dtype=np.int64)
        mean = np.asarray(self.mean, dtype=float)
        if not (lo.shape == hi.shape == mean.shape) or lo.ndim != 1 or lo.size == 0:
            raise DomainError("band lo/mean/hi must be non-empty vectors of equal length")
        if np.any(lo > hi):
            raise DomainError("band lo must not exceed hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "mean", mean)

    @property
    def horizon(self) -> int:
        return int(self.lo.size)

    @property
    def days(self) -> np.ndarray:
        return np.arange(self.d + 1, self.d + self.horizon + 1)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"day": self.days, "lo": self.lo, "mean": self.mean, "hi": self.hi})

    def to_json(self) -> Json:
        return {
            "level": float(self.level),
            "d": int(self.d),
            "n_observed": int(self.n_observed),
            "horizon": self.horizon,
            "trajectories_kept": int(self.trajectories_kept),
            "n_draws": int(self.n_draws),
        }


@dataclass(frozen=True)
class DmInterval:
    """Interval estimate of ``D_M``; ``None`` marks a right-censored value."""

    target_M: int
    method: str
    level: float
    point: Optional[int]
    lower: Optional[int]
    upper: Optional[int]
    point_median: Optional[int] = None
    d_up_final: Optional[int] = None
    n_censored: int = 0
    trajectories_kept: Optional[int] = None

    @property
    def length(self) -> Optional[int]:
        if self.lower is None or self.upper is None:
            return None
        return self.upper - self.lower

    def contains(self, days: Optional[int]) -> bool:
        """Whether a realized ``D_M`` (``None`` if never reached) is covered."""
        if self.lower is None:
            return days is None
        if days is None:
            return self.upper is None
        if days < self.lower:
            return False
        return self.upper is None or days <= self.upper

    def to_json(self) -> DmIntervalJson:
        out: DmIntervalJson = {
            "target_M": int(self.target_M),
            "method": self.method,
            "level": float(self.level),
            "point": _day_or_censored(self.point),
            "lower": _day_or_censored(self.lower),
            "upper": _day_or_censored(self.upper),
        }
        if self.point_median is not None or self.method == "posterior":
            out["point_median"] = _day_or_censored(self.point_median)
        if self.d_up_final is not None:
            out["d_up_final"] = int(self.d_up_final)
        if self.method == "posterior":
            out["n_censored"] = int(self.n_censored)
        if self.trajectories_kept is not None:
            out["trajectories_kept"] = int(self.trajectories_kept)
        return out


@dataclass(frozen=True)
class NewUserDraw:
    """Triggers of the new users over days ``d+1 .. d+d_up``."""

    d: int
    d_up: int
    trigger_days: np.ndarray

    def __post_init__(self) -> None:
        days = np.asarray(self.trigger_days, dtype=np.int64)
        if days.size and (days.min() < self.d + 1 or days.max() > self.d + self.d_up):
            raise DomainError(f"trigger days must lie in [{self.d + 1}, {self.d + self.d_up}]")
        object.__setattr__(self, "trigger_days", days)

    @property
    def K(self) -> int:
        return int(self.trigger_days.size)


@dataclass(frozen=True)
class TruncationRule:
    """When the Ferguson–Klass sampler stops generating jumps.

    ``adaptive``: stop at the first jump whose probability of triggering
    within ``d_up`` days is below ``delta``.  ``fixed``: keep exactly
    ``n_jumps`` jumps.
    """

    kind: str = "adaptive"
    delta: float = 1e-4
    d_up: int = 14
    n_jumps: Optional[int] = None
    max_jumps: int = 1_000_000

    def __post_init__(self) -> None:
        if self.kind not in ("adaptive", "fixed"):
            raise DomainError(f"unknown truncation kind {self.kind!r}")
        if self.kind == "adaptive" and not (0.0 < self.delta < 1.0 and self.d_up >= 1):
            raise DomainError("adaptive truncation needs 0 < delta < 1 and d_up >= 1")
        if self.kind == "fixed" and (self.n_jumps is None or self.n_jumps < 0):
            raise DomainError("fixed truncation needs n_jumps >= 0")

    @classmethod
    def adaptive(cls, delta: float, d_up: int) -> "TruncationRule":
        return cls(kind="adaptive", delta=delta, d_up=d_up)

    @classmethod
    def fixed(cls, n_jumps: int) -> "TruncationRule":
        return cls(kind="fixed", n_jumps=n_jumps)

    def stop(self, tau: float, n_kept: int) -> bool:
        if self.kind == "fixed":
            return n_kept >= self.n_jumps
        return -math.expm1(self.d_up * math.log1p(-tau)) < self.delta


@dataclass(frozen=True)
class FergusonKlassDraw:
    """Decreasing jumps of the new-user measure and one trigger day per jump."""

    zeta: float
    jumps: np.ndarray
    trigger_days: np.ndarray = field(repr=False)


def _check_target(post: PosteriorState, target_M: int) -> None:
    if target_M <= post.n_users:
        raise PlanningError(
            f"target M={target_M} is already attained: {post.n_users} users observed"
        )


def point_estimate_dm(post: PosteriorState, target_M: int,
                      d_cap: int = DEFAULT_DAY_CAP) -> Optional[int]:
    """Smallest number of extra days whose posterior mean count reaches ``target_M``.

    Returns ``0`` when the target is already attained and ``None`` when it
    is not reached within ``d_cap`` days.
    """
    if d_cap < 1:
        raise DomainError(f"d_cap must be >= 1, got {d_cap}")
    if target_M <= post.n_users:
        return 0
    means = predictive_trajectory_means(post, d_cap)
    reached = np.flatnonzero(means >= target_M * (1.0 - _MEAN_RTOL))
    return int(reached[0]) + 1 if reached.size else None


def _future_weights(post: PosteriorState, horizon: int) -> np.ndarray:
    """``α B(1 − α, ℓ)`` for ``ℓ = d+1 .. d+horizon``."""
    alpha = post.hyper.alpha
    days = np.arange(post.d + 1, post.d + horizon + 1, dtype=float)
    return alpha * np.exp(special.betaln(1.0 - alpha, days))


def simulate_trajectories(post: PosteriorState, horizon: int, n_draws: int,
                          rng: RngStream) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Joint draws of ``(Δ^(-α), N*_{d+1..d+horizon})`` and their log densities.

    Returns:
        ``(zeta, new_counts, log_density)`` with shapes ``(Q,)``,
        ``(Q, horizon)`` and ``(Q,)``.
    """
    zeta = sample_gamma(post.delta_shape, post.delta_rate, rng, size=n_draws)
    rates = zeta[:, None] * _future_weights(post, horizon)[None, :]
    counts = sample_poisson(rates, rng)
    log_density = (
        stats.gamma.logpdf(zeta, a=post.delta_shape, scale=1.0 / post.delta_rate)
        + stats.poisson.logpmf(counts, rates).sum(axis=1)
    )
    return zeta, counts, log_density


def global_band(post: PosteriorState, level: float, horizon: int, Q: int,
                rng: RngStream) -> CredibleBand:
    """Simultaneous credible band over days ``d+1 .. d+horizon``.

    Simulates ``Q`` joint draws, keeps the ``ceil(level · Q)`` with the
    highest joint density (ties keep the earlier draw) and takes the
    pointwise envelope of their cumulative trajectories.  ``level == 1``
    keeps every draw.

    Raises:
        DomainError: On ``level`` outside ``(0, 1]``, ``horizon < 1`` or
            ``Q < 100``.
    """
    if not 0.0 < level <= 1.0:
        raise DomainError(f"level must lie in (0, 1], got {level!r}")
    if horizon < 1:
        raise DomainError(f"band horizon must be >= 1, got {horizon}")
    if Q < MIN_BAND_DRAWS:
        raise DomainError(f"band needs Q >= {MIN_BAND_DRAWS} draws, got {Q}")

    _, counts, log_density = simulate_trajectories(post, horizon, Q, rng)
    n_keep = min(Q, math.ceil(level * Q - 1e-9))
    kept = np.argsort(-log_density, kind="stable")[:n_keep]
    paths = post.n_users + np.cumsum(counts[kept], axis=1)
    band = CredibleBand(
        level=level,
        d=post.d,
        n_observed=post.n_users,
        lo=paths.min(axis=0),
        hi=paths.max(axis=0),
        mean=predictive_trajectory_means(post, horizon),
        trajectories_kept=n_keep,
        n_draws=Q,
    )
    logger.info("Band over %d days: kept %d of %d trajectories, final [%d, %d]",
                horizon, n_keep, Q, band.lo[-1], band.hi[-1])
    return band


def invert_band(band: CredibleBand, target_M: int,
                post: Optional[PosteriorState] = None,
                d_cap: int = DEFAULT_DAY_CAP) -> DmInterval:
    """Slice ``band`` at ``target_M``.

    ``lower`` is the first day the optimistic envelope reaches the target,
    ``upper`` the first day the pessimistic one does (censored if never).
    The point estimate comes from :func:`point_estimate_dm` when ``post``
    is given and from the band's mean trajectory otherwise.

    Raises:
        PlanningError: If the target is already attained.
        BandTooShortError: If even the optimistic envelope stays below
            the target.
    """
    if target_M <= band.n_observed:
        raise PlanningError(
            f"target M={target_M} is already attained: {band.n_observed} users observed"
        )
    hits_hi = np.flatnonzero(band.hi >= target_M)
    if hits_hi.size == 0:
        raise BandTooShortError(
            f"band over {band.horizon} days never reaches M={target_M}; enlarge the horizon"
        )
    hits_lo = np.flatnonzero(band.lo >= target_M)
    if post is not None:
        point = point_estimate_dm(post, target_M, d_cap)
    else:
        hits_mean = np.flatnonzero(band.mean >= target_M * (1.0 - _MEAN_RTOL))
        point = int(hits_mean[0]) + 1 if hits_mean.size else None
    return DmInterval(
        target_M=target_M,
        method="inversion",
        level=band.level,
        point=point,
        lower=int(hits_hi[0]) + 1,
        upper=int(hits_lo[0]) + 1 if hits_lo.size else None,
        d_up_final=band.horizon,
        trajectories_kept=band.trajectories_kept,
    )


def inversion_interval(post: PosteriorState, target_M: int, level: float, Q: int,
                       rng: RngStream, horizon: Optional[int] = None,
                       d_cap: int = DEFAULT_DAY_CAP) -> Tuple[CredibleBand, DmInterval]:
    """Build a band and slice it, doubling the horizon while it is too short.

    The initial horizon is three times the point estimate of ``D_M``.
    """
    _check_target(post, target_M)
    if horizon is None:
        point = point_estimate_dm(post, target_M, d_cap)
        horizon = min(3 * point, d_cap) if point else d_cap
    retrying = Retrying(
        stop=stop_after_attempt(MAX_DOUBLINGS + 1),
        retry=retry_if_exception_type(BandTooShortError),
        before_sleep=before_sleep_log(logger, logging.DEBUG),
        reraise=True,
    )
    for attempt in retrying:
        with attempt:
            span = horizon * 2 ** (attempt.retry_state.attempt_number - 1)
            band = global_band(post, level, span, Q, rng)
            interval = invert_band(band, target_M, post, d_cap)
    return band, interval


def sample_new_user_triggers(post: PosteriorState, d_up: int, rng: RngStream) -> NewUserDraw:
    """Draw the new users' first-trigger days over ``d+1 .. d+d_up``.

    ``K ~ NegBin`` as in :func:`predict_new_users_law`, then ``K`` i.i.d.
    days with probability proportional to ``B(1 − α, y)``.
    """
    if d_up < 1:
        raise DomainError(f"d_up must be >= 1, got {d_up}")
    k = sample_negbin(predict_new_users_law(post, d_up), rng)
    if k == 0:
        return NewUserDraw(d=post.d, d_up=d_up, trigger_days=np.empty(0, dtype=np.int64))
    days = np.arange(post.d + 1, post.d + d_up + 1, dtype=float)
    log_weights = special.betaln(1.0 - post.hyper.alpha, days)
    offsets = sample_categorical_logw(log_weights, rng, size=k)
    return NewUserDraw(d=post.d, d_up=d_up, trigger_days=post.d + 1 + np.asarray(offsets))


def _new_trigger_days(post: PosteriorState, d_up: int, rng: RngStream,
                      sampler: str, fk_delta: float) -> np.ndarray:
    if sampler == "negbin":
        return sample_new_user_triggers(post, d_up, rng).trigger_days
    draw = ferguson_klass_new_measure(post, TruncationRule.adaptive(fk_delta, d_up), rng)
    return draw.trigger_days[draw.trigger_days <= post.d + d_up]


def _one_dm_draw(post: PosteriorState, needed: int, d_up0: int, rng: RngStream,
                 sampler: str = "negbin", fk_delta: float = 1e-4) -> Tuple[float, int]:
    """One replication of the ``D_M`` sampler: ``(days or inf, last d_up)``."""
    last_d_up = d_up0
    retrying = Retrying(
        stop=stop_after_attempt(MAX_DOUBLINGS + 1),
        retry=retry_if_exception_type(HorizonTooShortError),
        before_sleep=before_sleep_log(logger, logging.DEBUG),
    )
    try:
        for attempt in retrying:
            with attempt:
                last_d_up = d_up0 * 2 ** (attempt.retry_state.attempt_number - 1)
                days = _new_trigger_days(post, last_d_up, rng, sampler, fk_delta)
                if days.size < needed:
                    raise HorizonTooShortError(
                        f"{days.size} new users within {last_d_up} days, need {needed}"
                    )
    except RetryError:
        return math.inf, last_d_up
    kth = np.partition(days, needed - 1)[needed - 1]
    return float(kth - post.d), last_d_up


def _order_quantile(sorted_samples: np.ndarray, q: float) -> float:
    """Inverse empirical CDF: the ``ceil(q·n)``-th smallest sample."""
    n = sorted_samples.size
    return float(sorted_samples[min(max(math.ceil(q * n - 1e-9), 1), n) - 1])


def _as_day(value: float) -> Optional[int]:
    return None if math.isinf(value) else int(value)


def posterior_dm(post: PosteriorState, target_M: int, K_mc: int, rng: RngStream,
                 level: float = 0.95, d_up0: Optional[int] = None,
                 d_cap: int = DEFAULT_DAY_CAP,
                 threads: int = 1, sampler: str = "negbin",
                 fk_delta: float = 1e-4) -> Tuple[np.ndarray, DmInterval]:
    """Monte Carlo posterior of ``D_M`` and its equal-tailed interval.

    Each replication draws new-user triggers over ``d_up`` days (three
    times the point estimate unless given), doubling ``d_up`` up to six
    times while fewer than ``M − N_d`` users arrive; replications that
    still fall short are right-censored (``inf`` in the sample).

    Replication ``k`` uses the ``k``-th child stream of ``rng``, so the
    result does not depend on ``threads``.

    ``sampler="negbin"`` draws the number of new users and then their
    trigger days; ``sampler="ferguson-klass"`` draws the jumps of the
    new-user measure one by one (truncated at ``fk_delta``), which is
    exact up to truncation but far slower for large ``α``.

    Returns:
        The sample of ``D_M`` (floats, ``inf`` when censored) and the
        interval with ``point = ceil(mean)`` and the median alongside.

    Raises:
        PlanningError: If the target is already attained.
        DomainError: If ``K_mc < 100`` or ``level`` is outside ``(0, 1)``.
    """
    _check_target(post, target_M)
    if K_mc < MIN_POSTERIOR_DRAWS:
        raise DomainError(f"posterior_dm needs K_mc >= {MIN_POSTERIOR_DRAWS}, got {K_mc}")
    if not 0.0 < level < 1.0:
        raise DomainError(f"level must lie in (0, 1), got {level!r}")
    if sampler not in SAMPLERS:
        raise DomainError(f"unknown sampler {sampler!r}; use one of {SAMPLERS}")
    needed = target_M - post.n_users
    if d_up0 is None:
        d_up0 = 3 * (point_estimate_dm(post, target_M, d_cap) or d_cap)

    streams = rng.spawn(K_mc)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results: List[Tuple[float, int]] = list(
                pool.map(lambda s: _one_dm_draw(post, needed, d_up0, s, sampler, fk_delta),
                         streams)
            )
    else:
        results = [_one_dm_draw(post, needed, d_up0, s, sampler, fk_delta) for s in streams]

    samples = np.array([r[0] for r in results])
    d_up_final = max(r[1] for r in results)
    n_censored = int(np.isinf(samples).sum())
    if n_censored:
        logger.warning("%d of %d D_M draws censored beyond %d days", n_censored, K_mc, d_up_final)

    ordered = np.sort(samples)
    eps = 1.0 - level
    mean = float(samples.mean())
    interval = DmInterval(
        target_M=target_M,
        method="posterior",
        level=level,
        point=None if math.isinf(mean) else int(math.ceil(mean - 1e-9)),
        lower=_as_day(_order_quantile(ordered, eps / 2.0)),
        upper=_as_day(_order_quantile(ordered, 1.0 - eps / 2.0)),
        point_median=_as_day(_order_quantile(ordered, 0.5)),
        d_up_final=d_up_final,
        n_censored=n_censored,
    )
    logger.info("Posterior D_M for M=%d: point %s, interval [%s, %s]", target_M,
                interval.point, interval.lower, interval.upper)
    return samples, interval


def _solve_jump(scale: float, arrival: float, d: int, alpha: float, upper: float) -> float:
    """Root of ``scale · T(τ) = arrival`` in ``(0, upper]``; ``T`` is decreasing.

    A root at or above ``upper`` is returned as ``upper``.
    """
    if not upper > 0.0:
        raise NumericalError(f"no room below the previous jump for arrival time {arrival!r}")

    def excess(tau: float) -> float:
        return scale * stable_tail_integral(tau, d, alpha) - arrival

    if excess(upper) >= 0.0:
        return upper
    lower = upper / 2.0
    while excess(lower) <= 0.0:
        lower /= 2.0
        if lower < 1e-300:
            raise NumericalError(f"cannot bracket the jump for arrival time {arrival!r}")
    try:
        return optimize.brentq(excess, lower, upper, xtol=_ROOT_XTOL, rtol=_ROOT_RTOL,
                               maxiter=_ROOT_MAXITER)
    except (RuntimeError, ValueError) as exc:
        raise NumericalError(f"jump root not located for arrival time {arrival!r}: {exc}") from exc


def ferguson_klass_new_measure(post: PosteriorState, trunc: TruncationRule,
                               rng: RngStream) -> FergusonKlassDraw:
    """Jumps of the unseen-user part of the posterior, largest first.

    Draws ``ζ = Δ^(-α)`` from its posterior, then solves
    ``α ζ T(τ_ℓ) = E_ℓ`` at the arrival times ``E_ℓ`` of a unit-rate
    Poisson process, where ``T`` is :func:`stable_tail_integral`.  Each
    jump's trigger day is ``d`` plus a ``Geometric(τ_ℓ)`` draw.

    Raises:
        NumericalError: If a root cannot be located, or more than
            ``trunc.max_jumps`` jumps are needed.
    """
    alpha, d = post.hyper.alpha, post.d
    zeta = sample_gamma(post.delta_shape, post.delta_rate, rng)
    scale = alpha * zeta
    jumps: List[float] = []
    arrival = 0.0
    upper = float(np.nextafter(1.0, 0.0))
    while True:
        if trunc.kind == "fixed" and trunc.stop(0.0, len(jumps)):
            break
        arrival += rng.generator.exponential(1.0)
        tau = _solve_jump(scale, arrival, d, alpha, upper)
        if trunc.kind == "adaptive" and trunc.stop(tau, len(jumps)):
            break
        jumps.append(tau)
        # next jump strictly below this one
        upper = float(np.nextafter(tau, 0.0))
        if len(jumps) > trunc.max_jumps:
            raise NumericalError(f"more than {trunc.max_jumps} jumps before truncation")

    jump_arr = np.asarray(jumps, dtype=float)
    if jump_arr.size:
        triggers = d + rng.generator.geometric(jump_arr)
    else:
        triggers = np.empty(0, dtype=np.int64)
    return FergusonKlassDraw(zeta=zeta, jumps=jump_arr, trigger_days=np.asarray(triggers, dtype=np.int64))


def count_triggers_within(draw: FergusonKlassDraw, d: int, d_up: int) -> int:
    """Number of jumps whose trigger day falls in ``d+1 .. d+d_up``."""
    days = draw.trigger_days
    return int(np.count_nonzero((days > d) & (days <= d + d_up)))
