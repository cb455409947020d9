import math

import numpy as np
import pytest

from activity_forecast.baselines import (
    IbpParams,
    ibp_fit,
    ibp_log_marginal,
    ibp_predict_new_users,
)
from activity_forecast.data_model import SufficientStats, to_stats
from activity_forecast.errors import DomainError, FitError
from activity_forecast.generators import generate_ibp
from activity_forecast.sampling import RngStream


def _make_stats(d, counts, kind="bm") -> SufficientStats:
    return SufficientStats(d=d, counts=np.asarray(counts, dtype=np.int64), kind=kind)


class TestIbpParams:
    @pytest.mark.parametrize("theta, c", [(0.0, 1.0), (1.0, 0.0), (-1.0, 2.0)])
    def test_invalid_rejected(self, theta, c):
        with pytest.raises(DomainError):
            IbpParams(theta=theta, c=c)


class TestIbpLogMarginal:
    def test_single_user_single_day(self):
        # one user on day 1 of 1: Poisson(θ) = 1 times a jump with E[s] = 1
        params = IbpParams(theta=2.0, c=3.0)
        expected = math.log(2.0) - 2.0
        assert ibp_log_marginal(_make_stats(1, [1]), params) == pytest.approx(expected)

    def test_no_users(self):
        params = IbpParams(theta=1.5, c=2.0)
        expected = -1.5 * (1.0 + 2.0 / 3.0)
        assert ibp_log_marginal(_make_stats(2, []), params) == pytest.approx(expected)

    def test_geometric_stats_rejected(self):
        with pytest.raises(DomainError):
            ibp_log_marginal(_make_stats(3, [1], kind="gm"), IbpParams(1.0, 1.0))


class TestIbpFit:
    def test_recovers_generating_parameters(self):
        truth = IbpParams(theta=50.0, c=2.0)
        stats = to_stats(generate_ibp(truth, 30, RngStream(13)))
        fitted = ibp_fit(stats)
        assert fitted.c == pytest.approx(truth.c, rel=0.5)
        assert fitted.theta == pytest.approx(truth.theta, rel=0.5)
        assert ibp_log_marginal(stats, fitted) >= ibp_log_marginal(stats, truth) - 1e-6

    @pytest.mark.slow
    def test_concentration_recovered_across_replications(self):
        truth = IbpParams(theta=5.0, c=2.0)
        estimates = []
        for rng in RngStream(31).spawn(50):
            stats = to_stats(generate_ibp(truth, 10, rng))
            if stats.n_users:
                estimates.append(ibp_fit(stats).c)
            else:
                estimates.append(math.nan)
        within = [0.5 <= c <= 8.0 for c in estimates]
        assert np.mean(within) >= 0.8

    def test_theta_is_profiled(self):
        stats = to_stats(generate_ibp(IbpParams(theta=20.0, c=1.0), 10, RngStream(2)))
        fitted = ibp_fit(stats)
        harmonic = sum(fitted.c / (fitted.c + j - 1.0) for j in range(1, 11))
        assert fitted.theta == pytest.approx(stats.n_users / harmonic)

    def test_no_users_rejected(self):
        with pytest.raises(FitError):
            ibp_fit(_make_stats(4, []))


class TestIbpPrediction:
    def test_standard_convention(self):
        params = IbpParams(theta=3.0, c=2.0)
        expected = 3.0 * (2.0 / (2.0 + 5.0) + 2.0 / (2.0 + 6.0))
        assert ibp_predict_new_users(params, 5, 2) == pytest.approx(expected)

    def test_shifted_convention_predicts_less(self):
        params = IbpParams(theta=3.0, c=2.0)
        shifted = ibp_predict_new_users(params, 5, 2, convention="shifted")
        assert shifted == pytest.approx(3.0 * (2.0 / 8.0 + 2.0 / 9.0))
        assert shifted < ibp_predict_new_users(params, 5, 2)

    @pytest.mark.parametrize("d, horizon, convention", [
        (5, 0, "standard"), (-1, 3, "standard"), (5, 3, "unshifted"),
    ])
    def test_invalid_arguments(self, d, horizon, convention):
        with pytest.raises(DomainError):
            ibp_predict_new_users(IbpParams(1.0, 1.0), d, horizon, convention)
