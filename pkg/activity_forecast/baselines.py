"""Two-parameter Indian buffet process (IBP) baseline.

The Beta process with Lévy density ``θ c s^(-1) (1 - s)^(c-1)`` gives a
Poisson number of new users per day, so its prediction of ``N_D``
depends on the data only through the fitted ``(θ, c)``.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize, special

from activity_forecast.data_model import ModelKind, SufficientStats
from activity_forecast.empirical_bayes import FitConfig
from activity_forecast.errors import DomainError, FitError

logger = logging.getLogger(__name__)

CONVENTIONS = ("standard", "shifted")

_LOG_C_BOUNDS = (-10.0, 15.0)
_LOG_C_SCAN = 51


@dataclass(frozen=True)
class IbpParams:
    """Mass ``theta`` and concentration ``c`` of the IBP, both ``> 0``."""

    theta: float
    c: float

    def __post_init__(self) -> None:
        if not (self.theta > 0.0 and self.c > 0.0):
            raise DomainError(f"IBP needs theta > 0 and c > 0, got ({self.theta!r}, {self.c!r})")

    def to_dict(self) -> dict:
        return {"theta": float(self.theta), "c": float(self.c)}


def _harmonic(c: float, start: int, stop: int, shift: int = 1) -> float:
    """``Σ_{j=start}^{stop} c / (c + j - shift)``."""
    j = np.arange(start, stop + 1, dtype=float)
    return float(np.sum(c / (c + j - shift)))


def ibp_log_marginal(stats: SufficientStats, params: IbpParams) -> float:
    """Log marginal of Bernoulli activity counts under the IBP.

    ``N log θ − θ Σ_{i=1}^d c/(c+i−1) + Σ_i [log c + ln B(M_i, d − M_i + c)]``.
    """
    if stats.kind is not ModelKind.BERNOULLI:
        raise DomainError("the IBP baseline needs bernoulli statistics")
    m = stats.counts.astype(float)
    per_user = math.log(params.c) + special.betaln(m, stats.d - m + params.c)
    return float(
        stats.n_users * math.log(params.theta)
        - params.theta * _harmonic(params.c, 1, stats.d)
        + math.fsum(per_user.tolist())
    )


def _profile_theta(stats: SufficientStats, c: float) -> float:
    return stats.n_users / _harmonic(c, 1, stats.d)


def ibp_fit(stats: SufficientStats, cfg: Optional[FitConfig] = None) -> IbpParams:
    """Maximize the IBP marginal; ``θ`` is profiled out in closed form.

    ``θ̂(c) = N_d / Σ_{i=1}^d c/(c+i−1)`` leaves a one-dimensional search
    over ``log c``: a coarse scan followed by a bounded Brent search
    around the best scan point.

    Raises:
        FitError: If there are no observed users.
    """
    cfg = cfg or FitConfig(model=ModelKind.BERNOULLI)
    if stats.n_users == 0:
        raise FitError("cannot fit the IBP baseline: no users observed")

    def objective(log_c: float) -> float:
        c = math.exp(log_c)
        return -ibp_log_marginal(stats, IbpParams(theta=_profile_theta(stats, c), c=c))

    scan = np.linspace(*_LOG_C_BOUNDS, _LOG_C_SCAN)
    values = np.array([objective(x) for x in scan])
    best = int(np.argmin(values))
    lo = scan[max(best - 1, 0)]
    hi = scan[min(best + 1, scan.size - 1)]
    result = optimize.minimize_scalar(
        objective, bounds=(lo, hi), method="bounded",
        options={"xatol": cfg.xtol, "maxiter": cfg.max_iters},
    )
    log_c = float(result.x) if result.fun <= values[best] else float(scan[best])
    c = math.exp(log_c)
    params = IbpParams(theta=_profile_theta(stats, c), c=c)
    if not result.success:
        logger.warning("IBP fit did not converge: %s", result.message)
    logger.info("Fitted IBP baseline: theta=%.4f c=%.4g", params.theta, params.c)
    return params


def ibp_predict_new_users(params: IbpParams, d: int, horizon_D: int,
                          convention: str = "standard") -> float:
    """Poisson mean of the number of new users over ``horizon_D`` days.

    ``standard``: ``θ Σ_{j=d+1}^{d+D} c/(c+j−1)``, the same indexing as
    the marginal.  ``shifted``: ``θ Σ_{j=d+1}^{d+D} c/(c+j)``.
    """
    if horizon_D < 1:
        raise DomainError(f"horizon must be >= 1 day, got {horizon_D}")
    if d < 0:
        raise DomainError(f"d must be >= 0, got {d}")
    if convention not in CONVENTIONS:
        raise DomainError(f"unknown IBP convention {convention!r}; use one of {CONVENTIONS}")
    shift = 1 if convention == "standard" else 0
    return params.theta * _harmonic(params.c, d + 1, d + horizon_D, shift=shift)
