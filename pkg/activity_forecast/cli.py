"""Command-line entry point: ``python -m activity_forecast <command>``.

Commands:

* ``fit`` -- empirical Bayes hyperparameters of the chosen model.
* ``predict`` -- posterior predictive law of the new users over a horizon.
* ``plan`` -- interval estimates of the days needed to reach a target.
* ``simulate`` -- synthetic activity or trigger CSVs.
* ``benchmark`` -- a seeded benchmark run from a JSON configuration.

Exit codes: 0 on success, 1 on a numerical failure, 2 on any other
input or usage error.
"""

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

from activity_forecast import setup_logging
from activity_forecast.baselines import IbpParams
from activity_forecast.config import (
    GENERATORS,
    PLAN_METHODS,
    RunConfig,
    build_run_config,
    load_benchmark_config,
    load_json_config,
)
from activity_forecast.csv_io import write_activity_csv, write_band_csv, write_trigger_csv
from activity_forecast.data_model import (
    ModelKind,
    SufficientStats,
    TriggerData,
    ingest_csv,
    to_stats,
)
from activity_forecast.empirical_bayes import FitConfig, FitResult, fit
from activity_forecast.errors import ActivityForecastError, ConfigError, NumericalError
from activity_forecast.evaluation import json_default, run_benchmark, write_report
from activity_forecast.generators import (
    ZipfPopulation,
    generate_bernoulli_prior,
    generate_dg1,
    generate_dg2,
    generate_geometric_prior,
    generate_ibp,
    generate_zipf,
)
from activity_forecast.planning import inversion_interval, posterior_dm
from activity_forecast.sampling import RngStream
from activity_forecast.sbsp_models import (
    HyperParams,
    PosteriorState,
    posterior,
    posterior_predictive_quantiles,
    predict_new_users_law,
)
from activity_forecast.types import Json, PredictionJson

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_USAGE = 2


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="root seed of every random stream")
    common.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    common.add_argument("--config", help="JSON file with parameters; flags override it")
    common.add_argument("--output", help="output file (directory for benchmark)")
    common.add_argument("--log-level", dest="log_level",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return common


def _data_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--input", help="activity or trigger CSV")
    parser.add_argument("--d", type=int, help="number of observed days (default: last day seen)")
    parser.add_argument("--model", help="bm (bernoulli) or gm (geometric)")
    parser.add_argument("--n-starts", dest="n_starts", type=int)
    parser.add_argument("--max-iters", dest="max_iters", type=int)
    parser.add_argument("--tol", type=float)


def _hyper_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--alpha", type=float, help="skip fitting: use these hyperparameters")
    parser.add_argument("--c", type=float)
    parser.add_argument("--beta", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="activity_forecast",
        description="Forecast new users and plan experiment durations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_flags()

    p_fit = sub.add_parser("fit", parents=[common], help="fit hyperparameters")
    _data_flags(p_fit)

    p_predict = sub.add_parser("predict", parents=[common], help="predict new users")
    _data_flags(p_predict)
    _hyper_flags(p_predict)
    p_predict.add_argument("--horizon", type=int, help="future days D")

    p_plan = sub.add_parser("plan", parents=[common], help="days needed to reach a target")
    _data_flags(p_plan)
    _hyper_flags(p_plan)
    p_plan.add_argument("--target", type=int, help="target number of distinct users M")
    p_plan.add_argument("--target-mult", dest="target_mult", type=float,
                        help="target as a multiple of the users seen so far")
    p_plan.add_argument("--method", choices=PLAN_METHODS)
    p_plan.add_argument("--level", type=float)
    p_plan.add_argument("--band-draws", dest="band_draws", type=int)
    p_plan.add_argument("--posterior-draws", dest="posterior_draws", type=int)
    p_plan.add_argument("--d-up", dest="d_up", type=int, help="initial look-ahead of the sampler")
    p_plan.add_argument("--max-days", dest="max_days", type=int)
    p_plan.add_argument("--band-csv", dest="band_csv", help="write the credible band here")

    p_sim = sub.add_parser("simulate", parents=[common], help="generate synthetic data")
    p_sim.add_argument("--gen", choices=GENERATORS)
    p_sim.add_argument("--days", type=int)
    p_sim.add_argument("--alpha", type=float)
    p_sim.add_argument("--c", type=float)
    p_sim.add_argument("--beta", type=float)
    p_sim.add_argument("--gamma", type=float, help="Zipf tail exponent")
    p_sim.add_argument("--pool", type=int, help="Zipf pool size")
    p_sim.add_argument("--theta", type=float, help="IBP mass")

    sub.add_parser("benchmark", parents=[common], help="run a benchmark configuration")
    return parser


def _threads(run: RunConfig) -> int:
    return int(run.get("threads", os.cpu_count() or 1))


def _emit(payload: Json, output: Optional[str]) -> None:
    text = json.dumps(payload, indent=2, default=json_default)
    if output:
        path = Path(output)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n", encoding="utf-8")
        logger.info("Wrote %s", path)
    else:
        sys.stdout.write(text + "\n")


def _load_stats(run: RunConfig) -> SufficientStats:
    if not run.get("input"):
        raise ConfigError(f"{run.command} needs --input")
    data = ingest_csv(run["input"], d=run["d"])
    return to_stats(data, ModelKind.parse(run["model"]))


def _fit(run: RunConfig, stats: SufficientStats) -> FitResult:
    cfg = FitConfig(model=stats.kind, n_starts=int(run["n_starts"]),
                    max_iters=int(run["max_iters"]), tol=float(run["tol"]),
                    threads=_threads(run))
    return fit(stats, cfg)


def _resolve_posterior(run: RunConfig) -> Tuple[PosteriorState, Json]:
    """Posterior from explicit hyperparameters, or from a fit."""
    stats = _load_stats(run)
    if run.get("alpha") is not None:
        hyper = HyperParams(alpha=float(run["alpha"]), c=float(run["c"]), beta=float(run["beta"]))
        source: Json = {"hyper": hyper.to_dict(), "fitted": False}
    else:
        result = _fit(run, stats)
        hyper = result.hyper
        source = {**result.to_json(), "fitted": True}
    return posterior(stats, hyper), source


def cmd_fit(run: RunConfig) -> Json:
    result = _fit(run, _load_stats(run))
    return {"config": run.echo(), **result.hyper.to_dict(), **result.to_json()}


def cmd_predict(run: RunConfig) -> Json:
    post, source = _resolve_posterior(run)
    horizon = int(run["horizon"])
    law = predict_new_users_law(post, horizon)
    quantiles = posterior_predictive_quantiles(post, horizon, (0.05, 0.5, 0.95))
    prediction: PredictionJson = {
        "D": horizon,
        "mean": law.mean,
        "q05": quantiles[0.05],
        "q50": quantiles[0.5],
        "q95": quantiles[0.95],
        "negbin": {"r": law.r, "p": law.p},
    }
    return {"config": run.echo(), "fit": source, "n_observed": post.n_users, **prediction}


def cmd_plan(run: RunConfig) -> Json:
    post, source = _resolve_posterior(run)
    if run.get("target") is not None:
        target = int(run["target"])
    else:
        target = math.ceil(float(run["target_mult"]) * post.n_users - 1e-9)
    method = run["method"]
    level = float(run["level"])
    max_days = int(run["max_days"])
    inversion_rng, posterior_rng = RngStream(int(run["seed"])).spawn(2)

    intervals: Dict[str, Json] = {}
    payload: Json = {"config": run.echo(), "fit": source, "n_observed": post.n_users,
                     "target_M": target}
    if method in ("inversion", "both"):
        band, interval = inversion_interval(post, target, level, int(run["band_draws"]),
                                            inversion_rng, d_cap=max_days)
        intervals["inversion"] = interval.to_json()
        payload["band"] = band.to_json()
        if run.get("band_csv"):
            write_band_csv(band, run["band_csv"])
    if method in ("posterior", "both"):
        _, interval = posterior_dm(post, target, int(run["posterior_draws"]), posterior_rng,
                                   level=level, d_up0=run.get("d_up"), d_cap=max_days,
                                   threads=_threads(run))
        intervals["posterior"] = interval.to_json()
    payload["intervals"] = intervals
    return payload


def _simulate(run: RunConfig, rng: RngStream):
    gen = run["gen"]
    days = int(run["days"])
    if gen == "dg1":
        return generate_dg1(days, rng, c=float(run["c"]), beta=float(run["beta"]))[0]
    if gen == "zipf":
        return generate_zipf(ZipfPopulation(int(run["pool"]), float(run["gamma"])), days, rng)
    if gen == "ibp":
        return generate_ibp(IbpParams(theta=float(run["theta"]), c=float(run["c"])), days, rng)
    hyper = HyperParams(alpha=float(run["alpha"]), c=float(run["c"]), beta=float(run["beta"]))
    builders: Dict[str, Callable[..., Any]] = {
        "dg2": generate_dg2,
        "bm-prior": generate_bernoulli_prior,
        "gm-prior": generate_geometric_prior,
    }
    return builders[gen](hyper, days, rng)


def cmd_simulate(run: RunConfig) -> Optional[Json]:
    logger.info("Simulating with %s", run.echo())
    data = _simulate(run, RngStream(int(run["seed"])))
    output = run.get("output")
    if output is None:
        data.to_frame().to_csv(sys.stdout, index=False, lineterminator="\n")
    elif isinstance(data, TriggerData):
        write_trigger_csv(data, output)
    else:
        write_activity_csv(data, output)
    return None


def cmd_benchmark(args: argparse.Namespace) -> Json:
    if not args.config:
        raise ConfigError("benchmark needs --config pointing at a benchmark JSON file")
    cfg = load_benchmark_config(args.config, overrides={"seed": args.seed})
    threads = args.threads or os.cpu_count() or 1
    report = run_benchmark(cfg, threads=threads)
    out_dir = Path(args.output or Path("reports") / cfg.name)
    written = write_report(report, out_dir)
    return {
        "config": report["config_echo"],
        "rows": len(report["per_replication"]),
        "failures": len(report["failures"]),
        "files": {name: str(path) for name, path in written.items()},
    }


_COMMANDS: Dict[str, Callable[[RunConfig], Optional[Json]]] = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "plan": cmd_plan,
    "simulate": cmd_simulate,
}

_NOT_CONFIG = ("command", "config")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level or "INFO")
    try:
        if args.command == "benchmark":
            _emit(cmd_benchmark(args), None)
            return EXIT_OK
        file_cfg = load_json_config(args.config) if args.config else None
        flags = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
        run = build_run_config(args.command, file_cfg, flags)
        setup_logging(run["log_level"])
        payload = _COMMANDS[args.command](run)
        if payload is not None:
            _emit(payload, run.get("output"))
    except NumericalError as exc:
        logger.error("Numerical failure: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ActivityForecastError, OSError) as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK
