"""Run and benchmark configuration.

Every command starts from :data:`RUN_DEFAULTS`, overlays the JSON file
given with ``--config`` and then the flags given on the command line.
Unknown keys are rejected at each layer.  Environment variables are
never consulted.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

from activity_forecast.errors import ConfigError
from activity_forecast.types import Json
from activity_forecast.validation import validate_config_keys

logger = logging.getLogger(__name__)

_COMMON: Json = {"seed": 0, "threads": None, "output": None, "log_level": "INFO"}
_DATA: Json = {"input": None, "d": None, "model": "gm"}
_HYPER: Json = {"alpha": None, "c": None, "beta": None}
_FIT: Json = {"n_starts": 8, "max_iters": 2000, "tol": 1e-8}

RUN_DEFAULTS: Dict[str, Json] = {
    "fit": {**_COMMON, **_DATA, **_FIT, "model": "bm"},
    "predict": {**_COMMON, **_DATA, **_FIT, **_HYPER, "horizon": 14},
    "plan": {
        **_COMMON, **_DATA, **_FIT, **_HYPER,
        "target": None, "target_mult": None, "method": "both", "level": 0.95,
        "band_draws": 2000, "posterior_draws": 1000, "d_up": None,
        "max_days": 3650, "band_csv": None,
    },
    "simulate": {
        **_COMMON, "gen": "dg1", "days": 14, "alpha": 0.5, "c": 2500.0, "beta": 0.5,
        "gamma": 1.0, "pool": 1_000_000, "theta": 5.0,
    },
    "benchmark": {**_COMMON, "config": None},
}

PLAN_METHODS = ("inversion", "posterior", "both")
GENERATORS = ("dg1", "dg2", "zipf", "bm-prior", "gm-prior", "ibp")
BENCHMARK_GENERATORS = ("dg1", "dg2", "zipf", "bm-prior", "gm-prior")
BENCHMARK_MODELS = ("bm", "gm", "oracle", "ibp")
TASKS = ("prediction", "interval")
INTERVAL_SAMPLERS = ("negbin", "ferguson-klass")


@dataclass(frozen=True)
class RunConfig:
    """Effective parameters of one CLI command."""

    command: str
    params: Json

    def __getitem__(self, key: str) -> Any:
        return self.params[key]

    def get(self, key: str, default: Any = None) -> Any:
        value = self.params.get(key, default)
        return default if value is None else value

    def echo(self) -> Json:
        return {"command": self.command, **self.params}


def load_json_config(path: Union[str, Path]) -> Json:
    """Read a JSON object from ``path``.

    Raises:
        ConfigError: If the file is missing, unparsable, or not an object.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with path.open(encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return raw


def build_run_config(command: str, file_cfg: Optional[Mapping[str, Any]] = None,
                     flags: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Merge defaults, config file and flags; flags win.

    Flags whose value is ``None`` were not given and do not override.
    """
    if command not in RUN_DEFAULTS:
        raise ConfigError(f"unknown command {command!r}")
    allowed = RUN_DEFAULTS[command]
    params = dict(allowed)
    if file_cfg:
        validate_config_keys(command, file_cfg, allowed)
        params.update(file_cfg)
    if flags:
        given = {k: v for k, v in flags.items() if v is not None}
        validate_config_keys(command, given, allowed)
        params.update(given)
    _check_run_params(command, params)
    return RunConfig(command=command, params=params)


def _check_run_params(command: str, params: Json) -> None:
    if command == "predict" and int(params["horizon"]) < 1:
        raise ConfigError(f"horizon must be >= 1 day, got {params['horizon']}")
    if command == "plan":
        if params["method"] not in PLAN_METHODS:
            raise ConfigError(f"method must be one of {PLAN_METHODS}, got {params['method']!r}")
        if (params["target"] is None) == (params["target_mult"] is None):
            raise ConfigError("give exactly one of target or target_mult")
        if not 0.0 < float(params["level"]) < 1.0:
            raise ConfigError(f"level must lie in (0, 1), got {params['level']}")
    if command == "simulate" and params["gen"] not in GENERATORS:
        raise ConfigError(f"unknown generator {params['gen']!r}; use one of {GENERATORS}")
    hyper = [params.get(k) for k in ("alpha", "c", "beta")] if command in ("predict", "plan") else []
    if hyper and any(v is not None for v in hyper) and any(v is None for v in hyper):
        raise ConfigError("alpha, c and beta must be given together")


@dataclass(frozen=True)
class GeneratorSpec:
    """Data generator of a benchmark.

    ``alpha`` may be a list: each value (and each ``gammas`` entry for the
    Zipf generator) defines one benchmark setting.
    A ``dg2`` generator without ``alpha`` draws ``α ~ Beta(*alpha_prior)``
    per replication, as ``dg1`` always does.
    """

    kind: str
    alpha: Tuple[float, ...] = (0.5,)
    c: float = 2500.0
    beta: float = 0.5
    alpha_prior: Tuple[float, float] = (4.0, 10.0)
    gammas: Tuple[float, ...] = (1.0,)
    pool_size: int = 1_000_000

    ALLOWED = ("kind", "alpha", "c", "beta", "alpha_prior", "gammas", "pool_size")

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "GeneratorSpec":
        validate_config_keys("generator", raw, cls.ALLOWED)
        if raw.get("kind") not in BENCHMARK_GENERATORS:
            raise ConfigError(
                f"generator kind must be one of {BENCHMARK_GENERATORS}, got {raw.get('kind')!r}"
            )
        values = dict(raw)
        if values["kind"] == "dg2" and "alpha" not in values:
            values["alpha"] = ()
        for key in ("alpha", "gammas"):
            if key in values and not isinstance(values[key], (list, tuple)):
                values[key] = [values[key]]
            if key in values:
                values[key] = tuple(float(v) for v in values[key])
        if "alpha_prior" in values:
            prior = tuple(float(v) for v in values["alpha_prior"])
            if len(prior) != 2:
                raise ConfigError("alpha_prior must have two entries")
            values["alpha_prior"] = prior
        return cls(**values)

    def settings(self) -> Tuple[Tuple[str, float], ...]:
        """``(label, value)`` per setting: ``γ`` for Zipf, ``α`` otherwise."""
        if self.kind == "zipf":
            return tuple((f"gamma={g:g}", g) for g in self.gammas)
        if self.kind == "dg1" or not self.alpha:
            return ((self.kind, math.nan),)
        return tuple((f"alpha={a:g}", a) for a in self.alpha)


@dataclass(frozen=True)
class BenchmarkConfig:
    """A benchmark run, read from a bundled or user JSON file.

    For the ``interval`` task ``horizon_days`` is the window over which the
    true ``D_M`` is observed and ``targets`` are multiples of ``N_d``.
    """

    name: str
    task: str
    generator: GeneratorSpec
    train_days: int = 14
    horizon_days: int = 14
    replications: int = 50
    models: Tuple[str, ...] = ("bm", "gm", "oracle")
    targets: Tuple[float, ...] = (1.5,)
    level: float = 0.95
    band_draws: int = 2000
    posterior_draws: int = 1000
    max_days: int = 3650
    external_predictions: Optional[str] = None
    ibp_convention: str = "standard"
    sampler: str = "negbin"
    fk_delta: float = 1e-4
    seed: int = 0

    ALLOWED = (
        "name", "task", "generator", "train_days", "horizon_days", "replications",
        "models", "targets", "level", "band_draws", "posterior_draws", "max_days",
        "external_predictions", "ibp_convention", "sampler", "fk_delta", "seed",
    )

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "BenchmarkConfig":
        """Validate and build; unknown keys raise :class:`ConfigError`."""
        validate_config_keys("benchmark", raw, cls.ALLOWED)
        for key in ("name", "task", "generator"):
            if key not in raw:
                raise ConfigError(f"benchmark config is missing {key!r}")
        values = dict(raw)
        values["generator"] = GeneratorSpec.from_dict(raw["generator"])
        values["models"] = tuple(str(m).lower() for m in raw.get("models", cls.models))
        values["targets"] = tuple(float(t) for t in raw.get("targets", cls.targets))
        cfg = cls(**values)
        cfg.check()
        return cfg

    def check(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        unknown = sorted(set(self.models) - set(BENCHMARK_MODELS))
        if unknown:
            raise ConfigError(f"unknown model(s) {unknown}; allowed: {list(BENCHMARK_MODELS)}")
        if self.task == "interval" and not set(self.models) <= {"bm", "gm", "oracle"}:
            raise ConfigError("the interval task supports the bm, gm and oracle models only")
        if self.train_days < 1 or self.horizon_days < 1:
            raise ConfigError("train_days and horizon_days must be >= 1")
        if self.replications < 0:
            raise ConfigError(f"replications must be >= 0, got {self.replications}")
        if not 0.0 < self.level < 1.0:
            raise ConfigError(f"level must lie in (0, 1), got {self.level}")
        if any(t <= 1.0 for t in self.targets):
            raise ConfigError("target multipliers must exceed 1")
        if not self.generator.alpha and self.generator.kind in ("bm-prior", "gm-prior"):
            raise ConfigError(f"generator {self.generator.kind} needs at least one alpha")
        if self.ibp_convention not in ("standard", "shifted"):
            raise ConfigError(f"unknown ibp_convention {self.ibp_convention!r}")
        if self.sampler not in INTERVAL_SAMPLERS:
            raise ConfigError(f"sampler must be one of {INTERVAL_SAMPLERS}, got {self.sampler!r}")
        if not 0.0 < self.fk_delta < 1.0:
            raise ConfigError(f"fk_delta must lie in (0, 1), got {self.fk_delta}")

    def echo(self) -> Json:
        return asdict(self)


def load_benchmark_config(path: Union[str, Path],
                          overrides: Optional[Mapping[str, Any]] = None) -> BenchmarkConfig:
    """Read a benchmark JSON file, applying ``overrides`` (e.g. ``seed``)."""
    raw = load_json_config(path)
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    ext = raw.get("external_predictions")
    if ext and not Path(ext).is_absolute():
        raw["external_predictions"] = str(Path(path).parent / ext)
    logger.info("Loaded benchmark config %s from %s", raw.get("name"), path)
    return BenchmarkConfig.from_dict(raw)
