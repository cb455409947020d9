"""Exception hierarchy shared by the activity_forecast modules.

The command-line entry point maps :class:`NumericalError` to exit code 1
and every other :class:`ActivityForecastError` to exit code 2.
"""

from typing import Iterable, Optional


class ActivityForecastError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(ActivityForecastError, ValueError):
    """A parameter lies outside the domain of the function called."""


class DataValidationError(ActivityForecastError, ValueError):
    """Input data failed parsing or validation.

    Args:
        message: Human readable description.
        lines: CSV line numbers (header is line 1) that triggered the
            error, if known.
    """

    def __init__(self, message: str, lines: Optional[Iterable[int]] = None) -> None:
        self.lines = sorted(set(lines)) if lines is not None else []
        if self.lines:
            shown = ", ".join(str(n) for n in self.lines[:10])
            more = "" if len(self.lines) <= 10 else f" (+{len(self.lines) - 10} more)"
            message = f"{message} (line(s) {shown}{more})"
        super().__init__(message)


class ConfigError(ActivityForecastError, ValueError):
    """Configuration is invalid or contains unknown keys."""


class FitError(ActivityForecastError, ValueError):
    """Hyperparameter fitting cannot be carried out on the given data."""


class PlanningError(ActivityForecastError, ValueError):
    """A planning request cannot be answered (e.g. target already attained)."""


class BandTooShortError(PlanningError):
    """The credible band never reaches the target; enlarge its horizon."""


class NumericalError(ActivityForecastError, ArithmeticError):
    """A numerical routine failed (root not located, non-finite result)."""


class HorizonTooShortError(ActivityForecastError):
    """Too few new users were drawn within the simulated horizon.

    Raised inside the horizon-doubling retry loop of the posterior
    sampler for ``D_M``; never escapes the planning module.
    """
