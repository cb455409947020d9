"""Shared type aliases and typed dictionaries for the activity_forecast package."""

from typing import Any, Dict, List, Optional, TypedDict, Union

Json = Dict[str, Any]
"""A JSON-like dictionary with string keys and arbitrary values."""

DayOrCensored = Union[int, str]
"""A day count, or the string ``"censored"`` when it lies beyond the horizon."""


class HyperParamsJson(TypedDict):
    """Serialized SB-SP hyperparameters."""

    alpha: float
    c: float
    beta: float


class FitResultJson(TypedDict, total=False):
    """Serialized :class:`~activity_forecast.empirical_bayes.FitResult`."""

    model: str
    hyper: HyperParamsJson
    log_marginal: float
    converged: bool
    n_evals: int
    trace: List[float]


class NegBinJson(TypedDict):
    """Parameters of a negative binomial law."""

    r: float
    p: float


class PredictionJson(TypedDict):
    """Posterior predictive summary of the number of new users."""

    D: int
    mean: float
    q05: int
    q50: int
    q95: int
    negbin: NegBinJson


class DmIntervalJson(TypedDict, total=False):
    """Serialized :class:`~activity_forecast.planning.DmInterval`."""

    target_M: int
    method: str
    level: float
    point: DayOrCensored
    point_median: DayOrCensored
    lower: DayOrCensored
    upper: DayOrCensored
    d_up_final: int
    n_censored: int
    trajectories_kept: int


class ValidationReport(TypedDict):
    """Report produced by the frame validators in :mod:`.validation`."""

    record_count: int
    schema_errors: List[str]
    range_errors: List[str]
    duplicates: List[str]
    anomalies: List[str]
    valid: bool


class PredictionRow(TypedDict):
    """One model's prediction for one benchmark experiment."""

    experiment_id: str
    setting: str
    model_name: str
    predicted: float
    actual: int
    abs_err: float
    rel_err: Optional[float]
    eta: Optional[float]


class IntervalRow(TypedDict):
    """One interval estimate of ``D_M`` in the interval study."""

    experiment_id: str
    setting: str
    target_mult: float
    target_M: int
    n_observed: int
    model_name: str
    method: str
    point: Optional[float]
    lower: Optional[float]
    upper: Optional[float]
    truth: Optional[int]
    covered: bool
    length: Optional[float]
    seconds: float


class FailedReplication(TypedDict):
    """A benchmark replication that raised and was skipped."""

    experiment_id: str
    error: str


class BenchmarkReport(TypedDict):
    """Top-level benchmark report written to ``report.json``."""

    config_echo: Json
    per_replication: List[Json]
    failures: List[FailedReplication]
    aggregates: Json
