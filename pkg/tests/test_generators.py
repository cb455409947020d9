import numpy as np
import pytest
from scipy import special, stats

from activity_forecast.baselines import IbpParams
from activity_forecast.errors import DomainError
from activity_forecast.generators import (
    DG1_BETA,
    DG1_C,
    ZipfPopulation,
    generate_bernoulli_prior,
    generate_dg1,
    generate_dg2,
    generate_geometric_prior,
    generate_ibp,
    generate_zipf,
    zipf_first_days,
)
from activity_forecast.sampling import RngStream
from activity_forecast.sbsp_models import HyperParams
from activity_forecast.special_functions import gamma_accum


def _prior_count_pmf(hyper: HyperParams, days: int, support: np.ndarray) -> np.ndarray:
    gamma = gamma_accum(hyper.alpha, 0, days)
    return stats.nbinom.pmf(support, hyper.c + 1.0, hyper.beta / (hyper.beta + gamma))


def _tv_to_pmf(draws: np.ndarray, pmf_fn) -> float:
    support = np.arange(draws.max() + 1)
    pmf = pmf_fn(support)
    empirical = np.bincount(draws, minlength=support.size) / draws.size
    return 0.5 * (np.abs(empirical - pmf).sum() + max(0.0, 1.0 - pmf.sum()))


class TestGeometricPrior:
    @pytest.mark.slow
    def test_count_law(self):
        hyper = HyperParams(alpha=0.5, c=1.0, beta=1.0)
        streams = RngStream(99).spawn(100_000)
        counts = np.array([generate_geometric_prior(hyper, 3, s).n_users for s in streams])
        assert _tv_to_pmf(counts, lambda k: _prior_count_pmf(hyper, 3, k)) < 0.02

    def test_trigger_day_law(self):
        hyper = HyperParams(alpha=0.3, c=50_000.0, beta=1.0)
        data = generate_geometric_prior(hyper, 6, RngStream(5))
        weights = np.exp(special.betaln(0.7, np.arange(1.0, 7.0)))
        expected = weights / weights.sum()
        observed = np.bincount(data.first_days(), minlength=7)[1:] / data.n_users
        np.testing.assert_allclose(observed, expected, atol=0.01)

    def test_reproducible(self):
        hyper = HyperParams(alpha=0.5, c=10.0, beta=1.0)
        assert generate_geometric_prior(hyper, 5, RngStream(3)) == \
            generate_geometric_prior(hyper, 5, RngStream(3))


class TestBernoulliPrior:
    def test_shape(self):
        hyper = HyperParams(alpha=0.5, c=30.0, beta=1.0)
        matrix = generate_bernoulli_prior(hyper, 7, RngStream(0))
        assert matrix.d == 7
        assert all(1 <= days[0] and days[-1] <= 7 for _, days in matrix.users)
        assert all(list(days) == sorted(set(days)) for _, days in matrix.users)

    @pytest.mark.slow
    def test_count_law(self):
        hyper = HyperParams(alpha=0.4, c=2.0, beta=1.0)
        streams = RngStream(12).spawn(20_000)
        counts = np.array([generate_bernoulli_prior(hyper, 3, s).n_users for s in streams])
        assert _tv_to_pmf(counts, lambda k: _prior_count_pmf(hyper, 3, k)) < 0.03

    def test_invalid_days(self):
        with pytest.raises(DomainError):
            generate_bernoulli_prior(HyperParams(0.5, 1.0, 1.0), 0, RngStream(0))


class TestDataGenerators:
    def test_dg1_returns_generating_hyperparameters(self):
        matrix, hyper = generate_dg1(5, RngStream(1))
        assert hyper.c == DG1_C
        assert hyper.beta == DG1_BETA
        assert 0.0 < hyper.alpha < 1.0
        assert matrix.d == 5

    def test_dg2_starts_at_trigger_and_fades(self):
        hyper = HyperParams(alpha=0.3, c=500.0, beta=0.5)
        matrix = generate_dg2(hyper, 14, RngStream(8))
        triggers = generate_geometric_prior(hyper, 14, RngStream(8))
        assert matrix.n_users == triggers.n_users
        np.testing.assert_array_equal(matrix.first_days(), triggers.first_days())
        # later activity is sparse: ε_i <= 0.5 and the rate decays with Y_i
        repeat_rate = (matrix.active_counts() - 1).sum() / max(1, (14 - matrix.first_days()).sum())
        assert repeat_rate < 0.25

    def test_dg2_without_users(self):
        hyper = HyperParams(alpha=0.5, c=1e-6, beta=1e6)
        assert generate_dg2(hyper, 3, RngStream(0)).n_users == 0


class TestZipf:
    def test_population_validation(self):
        with pytest.raises(DomainError):
            ZipfPopulation(pool_size=0, tail_gamma=1.0)
        with pytest.raises(DomainError):
            ZipfPopulation(pool_size=10, tail_gamma=0.0)

    def test_first_days(self):
        pop = ZipfPopulation(pool_size=1000, tail_gamma=1.0)
        first = zipf_first_days(pop, RngStream(2))
        assert first.shape == (1000,)
        assert first[0] == 1
        assert first.min() >= 1

    def test_observed_users_match_expectation(self):
        pop = ZipfPopulation(pool_size=5000, tail_gamma=1.0)
        expected = pop.expected_observed(14)
        observed = generate_zipf(pop, 14, RngStream(6)).n_users
        assert abs(observed - expected) < 5.0 * np.sqrt(expected)

    def test_daily_activity_rate(self):
        pop = ZipfPopulation(pool_size=50, tail_gamma=0.5)
        matrix = generate_zipf(pop, 400, RngStream(4))
        counts = dict(zip(matrix.user_ids, matrix.active_counts()))
        # user 1 is active every day; user 4 half of the days
        assert counts["z0000001"] == 400
        assert counts["z0000004"] / 400 == pytest.approx(0.5, abs=0.08)


class TestIbpGenerator:
    def test_mean_number_of_users(self):
        params = IbpParams(theta=5.0, c=2.0)
        streams = RngStream(21).spawn(400)
        counts = np.array([generate_ibp(params, 10, s).n_users for s in streams])
        expected = 5.0 * sum(2.0 / (2.0 + j - 1.0) for j in range(1, 11))
        assert counts.mean() == pytest.approx(expected, rel=0.05)
