"""Prediction metrics and the seeded benchmark harness.

A benchmark generates synthetic data, splits it into a training window
of ``train_days`` and a truth window of ``horizon_days``, fits each
model on the training window and scores it against the truth.  Two
tasks are supported:

* ``prediction`` -- number of new users over the truth window
  (absolute error, relative error and accuracy ``η``, plus top-k
  rankings across experiments);
* ``interval`` -- interval estimates of ``D_M`` for targets given as
  multiples of ``N_d`` (coverage, length and wall time per method).

Replications draw from independent child streams of one root stream,
so reports do not depend on the number of threads.
"""

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from itertools import combinations
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from activity_forecast.baselines import ibp_fit, ibp_predict_new_users
from activity_forecast.config import BenchmarkConfig
from activity_forecast.csv_io import read_prediction_csv, write_table_csv
from activity_forecast.data_model import ActivityMatrix, TriggerData, to_stats
from activity_forecast.empirical_bayes import FitConfig, fit
from activity_forecast.errors import ActivityForecastError, BandTooShortError, DomainError
from activity_forecast.generators import (
    ZipfPopulation,
    generate_bernoulli_prior,
    generate_dg1,
    generate_dg2,
    generate_geometric_prior,
    generate_zipf,
)
from activity_forecast.planning import DmInterval, inversion_interval, posterior_dm
from activity_forecast.sampling import RngStream, sample_beta
from activity_forecast.sbsp_models import HyperParams, posterior, predict_new_users_law
from activity_forecast.types import (
    BenchmarkReport,
    FailedReplication,
    IntervalRow,
    Json,
    PredictionRow,
)

logger = logging.getLogger(__name__)

INTERVAL_METHODS = ("inversion", "posterior")
ObservedData = Union[ActivityMatrix, TriggerData]


@dataclass(frozen=True)
class PredictionRecord:
    """One model's predicted new-user count for one experiment."""

    experiment_id: str
    model_name: str
    predicted: float
    actual: int

    def __post_init__(self) -> None:
        if self.actual < 0:
            raise DomainError(f"actual count must be >= 0, got {self.actual}")


class ErrorMetrics(NamedTuple):
    abs_err: float
    rel_err: float
    eta: float


def error_metrics(predicted: float, actual: int) -> ErrorMetrics:
    """Absolute error, relative error and accuracy ``η = 1 − min(rel, 1)``.

    Raises:
        DomainError: If ``actual < 1`` (relative error undefined).
    """
    if actual < 1:
        raise DomainError(f"relative error needs actual >= 1, got {actual}")
    abs_err = abs(float(actual) - float(predicted))
    rel_err = abs_err / actual
    return ErrorMetrics(abs_err=abs_err, rel_err=rel_err, eta=1.0 - min(rel_err, 1.0))


def topk_ranking(records: Sequence[PredictionRecord], k_max: int) -> pd.DataFrame:
    """Count how often each model ranks among the ``k`` best, ``k = 1..k_max``.

    Within an experiment models are ordered by absolute error, ties by
    model name.

    Returns:
        Frame indexed by ``model_name`` with integer columns ``top1..topK``.

    Raises:
        DomainError: If experiments do not share one model set, a model
            appears twice in an experiment, or ``k_max`` is out of range.
    """
    columns = [f"top{k}" for k in range(1, k_max + 1)]
    if not records:
        return pd.DataFrame(columns=columns, dtype=int).rename_axis("model_name")
    frame = pd.DataFrame([asdict(r) for r in records])
    if frame.duplicated(subset=["experiment_id", "model_name"]).any():
        raise DomainError("a model appears more than once in an experiment")
    model_sets = frame.groupby("experiment_id")["model_name"].agg(frozenset)
    if model_sets.nunique() != 1:
        raise DomainError("experiments do not share the same model set")
    n_models = len(model_sets.iloc[0])
    if not 1 <= k_max <= n_models:
        raise DomainError(f"k_max must lie in [1, {n_models}], got {k_max}")

    frame["abs_err"] = (frame["predicted"] - frame["actual"]).abs()
    frame = frame.sort_values(["experiment_id", "abs_err", "model_name"], kind="mergesort")
    frame["rank"] = frame.groupby("experiment_id").cumcount()
    table = pd.DataFrame({
        col: (frame["rank"] < k).groupby(frame["model_name"]).sum()
        for k, col in enumerate(columns, start=1)
    })
    table.index.name = "model_name"
    return table.sort_index().astype(int)


def _first_days(data: ObservedData) -> np.ndarray:
    return data.first_days()


def truth_new_users(data: ObservedData, d: int, D: int) -> int:
    """Users first active in days ``d+1 .. d+D``.

    Raises:
        DomainError: If the data do not cover ``d + D`` days.
    """
    if d + D > data.d:
        raise DomainError(f"data cover {data.d} days, need {d + D}")
    first = _first_days(data)
    return int(np.count_nonzero((first > d) & (first <= d + D)))


def truth_days_to_target(data: ObservedData, d: int, M: int) -> Optional[int]:
    """Realized ``D_M``: extra days after ``d`` until ``M`` distinct users.

    ``0`` if already reached by day ``d``; ``None`` if not reached within
    the data.
    """
    first = np.sort(_first_days(data))
    if M <= np.count_nonzero(first <= d):
        return 0
    if M > first.size:
        return None
    return int(first[M - 1]) - d


def _as_matrix(data: ObservedData) -> ActivityMatrix:
    if isinstance(data, ActivityMatrix):
        return data
    return ActivityMatrix(d=data.d, users=tuple((u, (y,)) for u, y in data.triggers))


def _generate(cfg: BenchmarkConfig, value: float, days: int,
              rng: RngStream) -> Tuple[ActivityMatrix, Optional[HyperParams]]:
    gen = cfg.generator
    if gen.kind == "dg1":
        return generate_dg1(days, rng, c=gen.c, beta=gen.beta, alpha_prior=gen.alpha_prior)
    if gen.kind == "zipf":
        return generate_zipf(ZipfPopulation(gen.pool_size, value), days, rng), None
    if math.isnan(value):
        value = sample_beta(gen.alpha_prior[0], gen.alpha_prior[1], rng)
    hyper = HyperParams(alpha=value, c=gen.c, beta=gen.beta)
    if gen.kind == "dg2":
        return generate_dg2(hyper, days, rng), hyper
    if gen.kind == "bm-prior":
        return generate_bernoulli_prior(hyper, days, rng), hyper
    return _as_matrix(generate_geometric_prior(hyper, days, rng)), hyper


def _model_posterior(model: str, train: ActivityMatrix, truth: Optional[HyperParams]):
    if model == "oracle":
        return posterior(to_stats(train, "bm"), truth)
    stats = to_stats(train, model)
    return posterior(stats, fit(stats, FitConfig(model=stats.kind)).hyper)


def _predict(model: str, train: ActivityMatrix, truth: Optional[HyperParams],
             cfg: BenchmarkConfig) -> float:
    if model == "ibp":
        params = ibp_fit(to_stats(train, "bm"))
        return ibp_predict_new_users(params, train.d, cfg.horizon_days, cfg.ibp_convention)
    post = _model_posterior(model, train, truth)
    return predict_new_users_law(post, cfg.horizon_days).mean


def _prediction_row(experiment_id: str, setting: str, model: str,
                    predicted: float, actual: int) -> PredictionRow:
    if actual >= 1:
        metrics = error_metrics(predicted, actual)
        rel, eta = metrics.rel_err, metrics.eta
    else:
        rel = eta = None
    return {
        "experiment_id": experiment_id,
        "setting": setting,
        "model_name": model,
        "predicted": float(predicted),
        "actual": int(actual),
        "abs_err": abs(float(predicted) - actual),
        "rel_err": rel,
        "eta": eta,
    }


def _prediction_replication(cfg: BenchmarkConfig, external: Optional[pd.DataFrame],
                            experiment_id: str, setting: str, value: float,
                            rng: RngStream) -> List[PredictionRow]:
    full, truth = _generate(cfg, value, cfg.train_days + cfg.horizon_days, rng)
    train = full.restrict_to_days(cfg.train_days)
    actual = truth_new_users(full, cfg.train_days, cfg.horizon_days)
    rows = []
    for model in cfg.models:
        if model == "oracle" and truth is None:
            continue
        rows.append(_prediction_row(experiment_id, setting, model,
                                    _predict(model, train, truth, cfg), actual))
    if external is not None:
        for _, ext in external[external["experiment_id"] == experiment_id].iterrows():
            rows.append(_prediction_row(experiment_id, setting, ext["model_name"],
                                        ext["predicted_new_users"], actual))
    return rows


def _covered(interval: DmInterval, truth: Optional[int], window: int) -> bool:
    if truth is None:
        return interval.upper is None or interval.upper > window
    return interval.contains(truth)


def _interval_replication(cfg: BenchmarkConfig, experiment_id: str, setting: str,
                          value: float, rng: RngStream) -> List[IntervalRow]:
    full, truth_hyper = _generate(cfg, value, cfg.train_days + cfg.horizon_days, rng)
    train = full.restrict_to_days(cfg.train_days)
    n_obs = train.n_users
    models = [m for m in cfg.models if not (m == "oracle" and truth_hyper is None)]
    streams = iter(rng.spawn(len(models) * len(cfg.targets) * len(INTERVAL_METHODS)))
    rows = []
    for model in models:
        post = _model_posterior(model, train, truth_hyper)
        for mult in cfg.targets:
            target = max(math.ceil(mult * n_obs - 1e-9), n_obs + 1)
            truth = truth_days_to_target(full, cfg.train_days, target)
            for method in INTERVAL_METHODS:
                stream = next(streams)
                start = time.perf_counter()
                if method == "inversion":
                    try:
                        _, interval = inversion_interval(post, target, cfg.level, cfg.band_draws,
                                                         stream, d_cap=cfg.max_days)
                    except BandTooShortError:
                        interval = DmInterval(target_M=target, method=method, level=cfg.level,
                                              point=None, lower=None, upper=None)
                else:
                    _, interval = posterior_dm(post, target, cfg.posterior_draws, stream,
                                               level=cfg.level, d_cap=cfg.max_days,
                                               sampler=cfg.sampler, fk_delta=cfg.fk_delta)
                rows.append({
                    "experiment_id": experiment_id,
                    "setting": setting,
                    "target_mult": float(mult),
                    "target_M": int(target),
                    "n_observed": int(n_obs),
                    "model_name": model,
                    "method": method,
                    "point": interval.point,
                    "lower": interval.lower,
                    "upper": interval.upper,
                    "truth": truth,
                    "covered": _covered(interval, truth, cfg.horizon_days),
                    "length": interval.length,
                    "seconds": time.perf_counter() - start,
                })
    return rows


def _records(frame: pd.DataFrame) -> List[Json]:
    clean = frame.astype(object).where(frame.notna(), None)
    return clean.to_dict(orient="records")


def _q25(s: pd.Series) -> float:
    return s.quantile(0.25)


def _q75(s: pd.Series) -> float:
    return s.quantile(0.75)


def _prediction_aggregates(rows: List[Json]) -> Json:
    frame = pd.DataFrame(rows)
    if frame.empty:
        return {"by_model": [], "topk": [], "head_to_head": []}
    for col in ("rel_err", "eta"):
        frame[col] = pd.to_numeric(frame[col], errors="coerce")
    by_model = (
        frame.groupby(["setting", "model_name"], sort=True)
        .agg(
            n=("abs_err", "size"),
            abs_err_median=("abs_err", "median"),
            abs_err_q25=("abs_err", _q25),
            abs_err_q75=("abs_err", _q75),
            rel_err_median=("rel_err", "median"),
            rel_err_q25=("rel_err", _q25),
            rel_err_q75=("rel_err", _q75),
            eta_median=("eta", "median"),
        )
        .reset_index()
    )

    models = sorted(frame["model_name"].unique())
    complete = frame.groupby("experiment_id")["model_name"].transform("nunique") == len(models)
    records = [
        PredictionRecord(r.experiment_id, r.model_name, r.predicted, r.actual)
        for r in frame[complete].itertuples()
    ]
    topk = topk_ranking(records, len(models)).reset_index() if records else pd.DataFrame()

    wide = frame.pivot_table(index="experiment_id", columns="model_name", values="abs_err")
    duels = []
    for a, b in combinations(models, 2):
        both = wide[[a, b]].dropna()
        if len(both):
            duels.append({"model_a": a, "model_b": b, "n": int(len(both)),
                          "share_a_better": float((both[a] < both[b]).mean()),
                          "share_b_better": float((both[b] < both[a]).mean())})
    return {"by_model": _records(by_model), "topk": _records(topk), "head_to_head": duels}


def _interval_aggregates(rows: List[Json]) -> Json:
    frame = pd.DataFrame(rows)
    if frame.empty:
        return {"by_method": [], "paired_length": []}
    frame["length_f"] = pd.to_numeric(frame["length"], errors="coerce").fillna(np.inf)
    frame["upper_censored"] = frame["upper"].isna()
    keys = ["setting", "target_mult", "model_name", "method"]
    by_method = (
        frame.groupby(keys, sort=True)
        .agg(
            n=("covered", "size"),
            coverage=("covered", "mean"),
            length_median=("length_f", "median"),
            length_mean=("length_f", "mean"),
            seconds_median=("seconds", "median"),
            n_upper_censored=("upper_censored", "sum"),
        )
        .reset_index()
    )
    by_method = by_method.replace([np.inf, -np.inf], np.nan)

    paired = []
    wide = frame.pivot_table(index=["setting", "target_mult", "model_name", "experiment_id"],
                             columns="method", values="length_f", aggfunc="first")
    if set(INTERVAL_METHODS) <= set(wide.columns):
        grouped = (wide["inversion"] >= wide["posterior"]).groupby(
            level=["setting", "target_mult", "model_name"])
        for (setting, mult, model), flags in grouped:
            paired.append({"setting": setting, "target_mult": float(mult), "model_name": model,
                           "n": int(flags.size),
                           "share_inversion_not_shorter": float(flags.mean())})
    return {"by_method": _records(by_method), "paired_length": paired}


def run_benchmark(cfg: BenchmarkConfig, rng: Optional[RngStream] = None,
                  threads: int = 1) -> BenchmarkReport:
    """Run every replication of ``cfg`` and aggregate the results.

    A replication that raises is logged, recorded under ``failures`` and
    skipped.

    Args:
        cfg: Validated benchmark configuration.
        rng: Root stream; ``RngStream(cfg.seed)`` by default.
        threads: Number of replications run concurrently.

    Returns:
        ``{config_echo, per_replication, failures, aggregates}``.
    """
    rng = rng or RngStream(cfg.seed)
    external = (read_prediction_csv(cfg.external_predictions)
                if cfg.external_predictions and cfg.task == "prediction" else None)
    tasks = [
        (f"{cfg.name}-{label}-r{r:03d}", label, value)
        for label, value in cfg.generator.settings()
        for r in range(cfg.replications)
    ]
    streams = rng.spawn(len(tasks)) if tasks else ()
    logger.info("Benchmark %s: %d %s replications", cfg.name, len(tasks), cfg.task)

    def run_one(job: Tuple[Tuple[str, str, float], RngStream]):
        (experiment_id, label, value), stream = job
        try:
            if cfg.task == "prediction":
                return _prediction_replication(cfg, external, experiment_id, label, value, stream), None
            return _interval_replication(cfg, experiment_id, label, value, stream), None
        except (ActivityForecastError, ArithmeticError, ValueError) as exc:
            logger.warning("Replication %s failed: %s", experiment_id, exc)
            failure: FailedReplication = {"experiment_id": experiment_id,
                                          "error": f"{type(exc).__name__}: {exc}"}
            return [], failure

    jobs = list(zip(tasks, streams))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run_one, jobs))
    else:
        outcomes = [run_one(job) for job in jobs]

    rows: List[Json] = [row for batch, _ in outcomes for row in batch]
    failures = [f for _, f in outcomes if f is not None]
    aggregates = (_prediction_aggregates(rows) if cfg.task == "prediction"
                  else _interval_aggregates(rows))
    logger.info("Benchmark %s finished: %d rows, %d failed replications",
                cfg.name, len(rows), len(failures))
    return {
        "config_echo": cfg.echo(),
        "per_replication": rows,
        "failures": failures,
        "aggregates": aggregates,
    }


def json_default(value):
    """``json`` fallback for numpy scalars and tuples."""
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return None if np.isnan(value) else float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, (tuple, set)):
        return list(value)
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def write_report(report: BenchmarkReport, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write ``report.json`` and one CSV per table into ``out_dir``.

    Returns:
        Mapping of table name to written path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {"report": out_dir / "report.json"}
    with written["report"].open("w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, default=json_default)

    task = report["config_echo"].get("task", "prediction")
    tables = {"predictions" if task == "prediction" else "intervals": report["per_replication"]}
    tables.update(report["aggregates"])
    for name, rows in tables.items():
        path = out_dir / f"{name}.csv"
        write_table_csv(rows, path)
        written[name] = path
    logger.info("Report written to %s", out_dir)
    return written
