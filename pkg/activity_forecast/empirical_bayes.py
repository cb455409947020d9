"""Empirical Bayes fitting of (α, c, β) by maximizing the marginal likelihood.

The negative log marginal is minimized with a Nelder–Mead simplex in the
unconstrained coordinates ``(logit α, log c, log β)``, restarted from
the best few points of a fixed grid.  The objective is not convex, so the
restarts matter more than the local method.
"""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize, special

from activity_forecast.data_model import ModelKind, SufficientStats
from activity_forecast.errors import ConfigError, DomainError, FitError
from activity_forecast.sbsp_models import HyperParams, log_marginal
from activity_forecast.types import FitResultJson

logger = logging.getLogger(__name__)

GRID_ALPHA: Tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9)
GRID_C: Tuple[float, ...] = (1.0, 10.0, 1e2, 1e3, 1e4)
GRID_BETA: Tuple[float, ...] = (0.1, 1.0, 10.0)

# Box on the transformed coordinates; keeps every evaluated point in the
# open parameter domain and every log-Gamma term finite.
_LOGIT_ALPHA_BOUND = 30.0
_LOG_SCALE_BOUND = 25.0


@dataclass(frozen=True)
class FitConfig:
    """Options of :func:`fit`.

    Attributes:
        model: ``bernoulli`` or ``geometric``.
        n_starts: Number of grid points the simplex is restarted from.
        max_iters: Iteration cap per start.
        tol: Absolute tolerance on the objective spread of the simplex.
        xtol: Absolute tolerance on the simplex size (transformed space).
        start_grid: Explicit starting points; the default grid otherwise.
        threads: Number of starts optimized concurrently.
    """

    model: ModelKind = ModelKind.BERNOULLI
    n_starts: int = 8
    max_iters: int = 2000
    tol: float = 1e-8
    xtol: float = 1e-6
    start_grid: Optional[Tuple[HyperParams, ...]] = None
    threads: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "model", ModelKind.parse(self.model))
        if self.n_starts < 1:
            raise ConfigError(f"n_starts must be >= 1, got {self.n_starts}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if not (self.tol > 0.0 and self.xtol > 0.0):
            raise ConfigError("tol and xtol must be positive")
        if self.start_grid is not None and not self.start_grid:
            raise ConfigError("start_grid, when given, must not be empty")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")


@dataclass(frozen=True)
class FitResult:
    """Outcome of :func:`fit`.

    ``trace`` is the best log marginal after each simplex iteration of
    the winning start.
    """

    model: ModelKind
    hyper: HyperParams
    log_marginal: float
    converged: bool
    n_evals: int
    trace: List[float] = field(default_factory=list, compare=False)

    def to_json(self, with_trace: bool = False) -> FitResultJson:
        out: FitResultJson = {
            "model": self.model.value,
            "hyper": self.hyper.to_dict(),
            "log_marginal": float(self.log_marginal),
            "converged": bool(self.converged),
            "n_evals": int(self.n_evals),
        }
        if with_trace:
            out["trace"] = [float(v) for v in self.trace]
        return out


def to_unconstrained(hyper: HyperParams) -> np.ndarray:
    return np.array([special.logit(hyper.alpha), math.log(hyper.c), math.log(hyper.beta)])


def from_unconstrained(x: Sequence[float]) -> HyperParams:
    """Map ``(logit α, log c, log β)`` back, clipped to the search box."""
    z_alpha = float(np.clip(x[0], -_LOGIT_ALPHA_BOUND, _LOGIT_ALPHA_BOUND))
    z_c = float(np.clip(x[1], -_LOG_SCALE_BOUND, _LOG_SCALE_BOUND))
    z_beta = float(np.clip(x[2], -_LOG_SCALE_BOUND, _LOG_SCALE_BOUND))
    return HyperParams(alpha=float(special.expit(z_alpha)), c=math.exp(z_c), beta=math.exp(z_beta))


def _objective(x: np.ndarray, stats: SufficientStats) -> float:
    value = log_marginal(stats, from_unconstrained(x))
    return -value if math.isfinite(value) else math.inf


def default_start_grid() -> Tuple[HyperParams, ...]:
    """Full ``α × c × β`` start grid, in a fixed order."""
    return tuple(
        HyperParams(alpha=a, c=c, beta=b)
        for a, c, b in itertools.product(GRID_ALPHA, GRID_C, GRID_BETA)
    )


def profile_objective(
    stats: SufficientStats,
    model: Union[str, ModelKind],
    grid: Sequence[HyperParams],
) -> List[Tuple[HyperParams, float]]:
    """Evaluate the log marginal of ``model`` at every point of ``grid``.

    Raises:
        DomainError: On an empty grid or statistics of the other model.
    """
    kind = ModelKind.parse(model)
    if stats.kind is not kind:
        raise DomainError(f"{kind.value} objective needs {kind.value} statistics")
    if not grid:
        raise DomainError("profile grid must not be empty")
    return [(hyper, log_marginal(stats, hyper)) for hyper in grid]


def _select_starts(stats: SufficientStats, cfg: FitConfig) -> List[np.ndarray]:
    grid = cfg.start_grid if cfg.start_grid is not None else default_start_grid()
    points = [to_unconstrained(h) for h in grid]
    values = np.array([_objective(x, stats) for x in points])
    order = np.argsort(values, kind="stable")[: cfg.n_starts]
    return [points[i] for i in order]


def _run_start(x0: np.ndarray, stats: SufficientStats,
               cfg: FitConfig) -> Tuple[optimize.OptimizeResult, List[float]]:
    history: List[float] = []

    def _record(intermediate_result: optimize.OptimizeResult) -> None:
        history.append(-float(intermediate_result.fun))

    result = optimize.minimize(
        _objective,
        x0,
        args=(stats,),
        method="Nelder-Mead",
        callback=_record,
        options={
            "maxiter": cfg.max_iters,
            "xatol": cfg.xtol,
            "fatol": cfg.tol,
            "adaptive": False,
        },
    )
    return result, history


def fit(stats: SufficientStats, cfg: Optional[FitConfig] = None) -> FitResult:
    """Maximize the marginal likelihood of ``stats`` over ``(α, c, β)``.

    Args:
        stats: Sufficient statistics; their kind must match ``cfg.model``.
        cfg: Fit options; defaults to :class:`FitConfig` for ``stats.kind``.

    Returns:
        The best result across all starts; ties keep the earliest start.
        Non-convergence is reported through ``converged``, not raised.

    Raises:
        FitError: If there are no observed users.
        DomainError: If ``stats.kind`` does not match ``cfg.model``.
    """
    cfg = cfg or FitConfig(model=stats.kind)
    if stats.kind is not cfg.model:
        raise DomainError(f"cannot fit the {cfg.model.value} model to {stats.kind.value} statistics")
    if stats.n_users == 0:
        raise FitError("cannot fit hyperparameters: no users observed")

    starts = _select_starts(stats, cfg)
    if cfg.threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            runs = list(pool.map(lambda x0: _run_start(x0, stats, cfg), starts))
    else:
        runs = [_run_start(x0, stats, cfg) for x0 in starts]

    for i, (res, _) in enumerate(runs):
        logger.debug("Start %d: objective %.6f after %d evals (%s)", i, res.fun, res.nfev, res.message)

    best_idx = min(range(len(runs)), key=lambda i: (runs[i][0].fun, i))
    best, history = runs[best_idx]
    hyper = from_unconstrained(best.x)
    value = log_marginal(stats, hyper)
    n_evals = int(sum(res.nfev for res, _ in runs))
    result = FitResult(
        model=cfg.model,
        hyper=hyper,
        log_marginal=value,
        converged=bool(best.success),
        n_evals=n_evals,
        trace=history,
    )
    if not result.converged:
        logger.warning("Fit did not converge within %d iterations: %s", cfg.max_iters, best.message)
    logger.info("Fitted %s model: alpha=%.4f c=%.4g beta=%.4g log_marginal=%.4f",
                cfg.model.value, hyper.alpha, hyper.c, hyper.beta, value)
    return result
