"""Log-space Beta functions and the gamma accumulants used by every formula.

The accumulant

    gamma_a^b = alpha * sum_{i=1}^{b} B(1 - alpha, a + i)

appears in all marginal likelihoods, posteriors and predictive laws of
the SB-SP models.  Everything is computed through ``log B`` so that
large day counts and large user counts never overflow.
"""

import functools
import math

import numpy as np
from scipy import integrate, special

from activity_forecast.errors import DomainError

# Below this many days the alternating binomial expansion of the tail
# integral keeps at least ten significant digits for v < 1/2.
BINOMIAL_MAX_DAYS: int = 6

# The power series in (1 - v) is used on [1/2, 1).
_SERIES_SWITCH: float = 0.5
_SERIES_MAX_TERMS: int = 4000

# If the incomplete-Beta identity cancels more than six digits we
# fall back to adaptive quadrature.
_CANCELLATION_LIMIT: float = 1e-6


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")


def log_beta(x: float, y: float) -> float:
    """Return ``ln B(x, y) = ln Γ(x) + ln Γ(y) - ln Γ(x + y)``.

    Args:
        x: First argument, strictly positive.
        y: Second argument, strictly positive.

    Returns:
        The natural logarithm of the Beta function.

    Raises:
        DomainError: If either argument is not strictly positive.
    """
    if not (x > 0.0 and y > 0.0):
        raise DomainError(f"log_beta requires positive arguments, got ({x!r}, {y!r})")
    return float(special.betaln(x, y))


@functools.lru_cache(maxsize=8192)
def gamma_accum(alpha: float, a: int, b: int) -> float:
    """Return the accumulant ``γ_a^b = α Σ_{i=1}^{b} B(1-α, a+i)``.

    Results are memoized per ``(alpha, a, b)``; optimizer inner loops
    revisit the same day counts many times.

    Args:
        alpha: Stability index in ``(0, 1)``.
        a: Offset day count, ``a >= 0``.
        b: Number of summed days, ``b >= 1``.

    Returns:
        The strictly positive accumulant.

    Raises:
        DomainError: On ``alpha`` outside ``(0, 1)``, ``a < 0`` or ``b < 1``.
    """
    _check_alpha(alpha)
    if a < 0 or b < 1:
        raise DomainError(f"gamma_accum needs a >= 0 and b >= 1, got a={a}, b={b}")
    days = np.arange(a + 1, a + b + 1, dtype=float)
    terms = np.exp(special.betaln(1.0 - alpha, days))
    return alpha * math.fsum(terms.tolist())


def gamma_accum_path(alpha: float, a: int, b: int) -> np.ndarray:
    """Return ``[γ_a^1, γ_a^2, ..., γ_a^b]`` as a float array.

    Args:
        alpha: Stability index in ``(0, 1)``.
        a: Offset day count, ``a >= 0``.
        b: Path length, ``b >= 1``.

    Returns:
        Strictly increasing array of length ``b``.
    """
    _check_alpha(alpha)
    if a < 0 or b < 1:
        raise DomainError(f"gamma_accum_path needs a >= 0 and b >= 1, got a={a}, b={b}")
    days = np.arange(a + 1, a + b + 1, dtype=float)
    return alpha * np.cumsum(np.exp(special.betaln(1.0 - alpha, days)))


def stable_tail_integral(v: float, d: int, alpha: float) -> float:
    """Return ``T(v) = ∫_v^1 (1 - s)^d s^(-1-α) ds``.

    This is the tail of the posterior Lévy intensity of the unseen-user
    part of the SB-SP posterior, divided by ``α Δ^(-α)``.  It is strictly
    decreasing in ``v``, diverges as ``v → 0`` and vanishes as ``v → 1``.

    Evaluation path:

    * ``d == 0``: closed form ``(v^(-α) - 1) / α``.
    * ``v >= 1/2``: positive power series in ``u = 1 - v``.
    * ``d <= BINOMIAL_MAX_DAYS``: exact binomial expansion.
    * otherwise: integration by parts into a regularized incomplete
      Beta function, with adaptive quadrature when that identity
      cancels too many digits.

    Args:
        v: Jump value in ``(0, 1)``.
        d: Number of observed days, ``d >= 0``.
        alpha: Stability index in ``(0, 1)``.

    Returns:
        The nonnegative tail integral.

    Raises:
        DomainError: If ``v`` is outside ``(0, 1)`` or ``alpha`` outside ``(0, 1)``.
    """
    _check_alpha(alpha)
    if not 0.0 < v < 1.0:
        raise DomainError(f"v must lie in (0, 1), got {v!r}")
    if d < 0:
        raise DomainError(f"d must be >= 0, got {d}")

    if d == 0:
        return (v ** -alpha - 1.0) / alpha
    if v >= _SERIES_SWITCH:
        return _tail_series(1.0 - v, d, alpha)
    if d <= BINOMIAL_MAX_DAYS:
        return _tail_binomial(v, d, alpha)
    return _tail_incomplete_beta(v, d, alpha)


def _tail_binomial(v: float, d: int, alpha: float) -> float:
    """Σ_k C(d,k) (-1)^k (1 - v^(k-α)) / (k-α)."""
    terms = [
        math.comb(d, k) * (-1) ** k * (1.0 - v ** (k - alpha)) / (k - alpha)
        for k in range(d + 1)
    ]
    return max(math.fsum(terms), 0.0)


def _tail_series(u: float, d: int, alpha: float) -> float:
    """Σ_k (1+α)_k / k! · u^(d+k+1) / (d+k+1), all terms positive."""
    total = 0.0
    # log of (1+α)_k / k!, updated incrementally
    log_coef = 0.0
    log_u = math.log(u)
    for k in range(_SERIES_MAX_TERMS):
        term = math.exp(log_coef + (d + k + 1) * log_u) / (d + k + 1)
        total += term
        if term <= 1e-17 * total:
            return total
        log_coef += math.log((1.0 + alpha + k) / (k + 1.0))
    return _tail_quadrature(1.0 - u, d, alpha)


def _tail_incomplete_beta(v: float, d: int, alpha: float) -> float:
    """Integration by parts:

    α T(v) = v^(-α) (1-v)^d - d B(1-α, d) I_{1-v}(d, 1-α)
    """
    head = v ** -alpha * (1.0 - v) ** d
    rest = d * math.exp(special.betaln(1.0 - alpha, d)) * special.betainc(d, 1.0 - alpha, 1.0 - v)
    diff = head - rest
    if diff <= _CANCELLATION_LIMIT * head:
        return _tail_quadrature(v, d, alpha)
    return diff / alpha


def _tail_quadrature(v: float, d: int, alpha: float) -> float:
    value, _ = integrate.quad(
        lambda s: (1.0 - s) ** d * s ** (-1.0 - alpha),
        v, 1.0,
        epsabs=0.0, epsrel=1e-12, limit=400,
    )
    return value
