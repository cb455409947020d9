import math

import numpy as np
import pytest

from activity_forecast.data_model import ActivityMatrix, SufficientStats, TriggerData, to_stats
from activity_forecast.empirical_bayes import (
    FitConfig,
    default_start_grid,
    fit,
    from_unconstrained,
    profile_objective,
    to_unconstrained,
)
from activity_forecast.errors import ConfigError, DomainError, FitError
from activity_forecast.generators import generate_bernoulli_prior, generate_geometric_prior
from activity_forecast.sampling import RngStream
from activity_forecast.sbsp_models import HyperParams, log_marginal

TRUTH = HyperParams(alpha=0.4, c=200.0, beta=1.0)


@pytest.fixture(scope="module")
def bernoulli_stats() -> SufficientStats:
    return to_stats(generate_bernoulli_prior(TRUTH, 10, RngStream(17)))


@pytest.fixture(scope="module")
def geometric_stats() -> SufficientStats:
    return to_stats(generate_geometric_prior(TRUTH, 10, RngStream(17)))


class TestCoordinates:
    def test_round_trip(self):
        hyper = HyperParams(alpha=0.2, c=37.0, beta=0.05)
        back = from_unconstrained(to_unconstrained(hyper))
        assert back.alpha == pytest.approx(0.2)
        assert back.c == pytest.approx(37.0)
        assert back.beta == pytest.approx(0.05)

    def test_extreme_coordinates_are_clipped(self):
        hyper = from_unconstrained([500.0, -900.0, 900.0])
        assert 0.0 < hyper.alpha < 1.0
        assert hyper.c > 0.0
        assert np.isfinite(hyper.beta)


class TestFitConfig:
    @pytest.mark.parametrize("kwargs", [
        {"n_starts": 0}, {"max_iters": 0}, {"tol": 0.0}, {"threads": 0}, {"start_grid": ()},
    ])
    def test_invalid_options_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            FitConfig(**kwargs)

    def test_model_alias(self):
        assert FitConfig(model="gm").model.value == "geometric"


class TestProfileObjective:
    def test_one_value_per_grid_point(self, bernoulli_stats):
        grid = default_start_grid()
        values = profile_objective(bernoulli_stats, "bm", grid)
        assert len(values) == len(grid) == 75
        assert values[0] == (grid[0], log_marginal(bernoulli_stats, grid[0]))

    def test_mismatched_model_rejected(self, bernoulli_stats):
        with pytest.raises(DomainError):
            profile_objective(bernoulli_stats, "gm", default_start_grid())

    def test_empty_grid_rejected(self, bernoulli_stats):
        with pytest.raises(DomainError):
            profile_objective(bernoulli_stats, "bm", [])


class TestFit:
    def test_bernoulli_fit_beats_truth(self, bernoulli_stats):
        result = fit(bernoulli_stats)
        assert result.log_marginal >= log_marginal(bernoulli_stats, TRUTH) - 0.5
        assert result.hyper.alpha == pytest.approx(TRUTH.alpha, abs=0.15)

    def test_geometric_fit_beats_truth(self, geometric_stats):
        result = fit(geometric_stats, FitConfig(model="gm"))
        assert result.log_marginal >= log_marginal(geometric_stats, TRUTH) - 0.5

    def test_deterministic(self, bernoulli_stats):
        cfg = FitConfig(n_starts=3)
        assert fit(bernoulli_stats, cfg).hyper == fit(bernoulli_stats, cfg).hyper

    def test_threads_do_not_change_result(self, bernoulli_stats):
        serial = fit(bernoulli_stats, FitConfig(n_starts=4))
        parallel = fit(bernoulli_stats, FitConfig(n_starts=4, threads=4))
        assert serial.hyper == parallel.hyper
        assert serial.log_marginal == parallel.log_marginal

    def test_trace_never_decreases(self, bernoulli_stats):
        result = fit(bernoulli_stats, FitConfig(n_starts=2))
        trace = np.asarray(result.trace)
        assert trace.size > 0
        assert np.all(np.diff(trace) >= -1e-12)

    def test_json_output(self, bernoulli_stats):
        result = fit(bernoulli_stats, FitConfig(n_starts=1))
        out = result.to_json(with_trace=True)
        assert out["model"] == "bernoulli"
        assert set(out["hyper"]) == {"alpha", "c", "beta"}
        assert "trace" in out
        assert "trace" not in result.to_json()

    def test_no_users_rejected(self):
        with pytest.raises(FitError):
            fit(SufficientStats(d=3, counts=np.array([], dtype=np.int64)))

    def test_kind_mismatch_rejected(self, bernoulli_stats):
        with pytest.raises(DomainError):
            fit(bernoulli_stats, FitConfig(model="gm"))

    def test_explicit_start_grid(self, bernoulli_stats):
        cfg = FitConfig(n_starts=1, start_grid=(TRUTH,))
        result = fit(bernoulli_stats, cfg)
        assert result.log_marginal >= log_marginal(bernoulli_stats, TRUTH) - 1e-9


class TestSingleUser:
    def test_bernoulli_one_user_one_day(self):
        stats = to_stats(ActivityMatrix(d=1, users=(("u1", (1,)),)))
        result = fit(stats)
        assert math.isfinite(result.log_marginal)
        assert 0.0 < result.hyper.alpha < 1.0

    def test_geometric_one_user_one_day(self):
        stats = to_stats(TriggerData(d=1, triggers=(("u1", 1),)))
        result = fit(stats, FitConfig(model="gm"))
        assert math.isfinite(result.log_marginal)
        best_start = max(v for _, v in profile_objective(stats, "gm", default_start_grid()))
        assert result.log_marginal >= best_start - 1e-9


@pytest.mark.slow
class TestAlphaRecovery:
    def test_geometric_alpha_within_tolerance(self):
        truth = HyperParams(alpha=0.3, c=2500.0, beta=0.5)
        streams = RngStream(2024).spawn(20)
        estimates = np.array([
            fit(to_stats(generate_geometric_prior(truth, 14, s)), FitConfig(model="gm")).hyper.alpha
            for s in streams
        ])
        assert np.mean(np.abs(estimates - truth.alpha) <= 0.1) >= 0.8
