import itertools
import math

import numpy as np
import pytest

from activity_forecast.data_model import ActivityMatrix, SufficientStats, TriggerData, to_stats
from activity_forecast.errors import DomainError
from activity_forecast.generators import (
    log_compound_poisson_probability,
    log_sequential_probability_bernoulli,
)
from activity_forecast.sampling import NegBinLaw, RngStream, sample_negbin
from activity_forecast.sbsp_models import (
    HyperParams,
    log_marginal,
    log_marginal_bernoulli,
    log_marginal_geometric,
    posterior,
    posterior_predictive_quantiles,
    predict_new_users_law,
    predictive_trajectory_means,
    sample_seen_user_jumps,
)
from activity_forecast.special_functions import gamma_accum

HYPER_GRID = [
    HyperParams(alpha=0.5, c=1.0, beta=1.0),
    HyperParams(alpha=0.1, c=20.0, beta=0.3),
    HyperParams(alpha=0.85, c=0.2, beta=4.0),
]


def _make_stats(d, counts, kind="bm") -> SufficientStats:
    return SufficientStats(d=d, counts=np.asarray(counts, dtype=np.int64), kind=kind)


def _small_datasets():
    """Every labelled Bernoulli dataset with d <= 3 days and at most 2 users."""
    for d in (1, 2, 3):
        day_sets = [
            combo for size in range(1, d + 1)
            for combo in itertools.combinations(range(1, d + 1), size)
        ]
        yield ActivityMatrix(d=d)
        for days in day_sets:
            yield ActivityMatrix(d=d, users=(("u1", days),))
        for first, second in itertools.product(day_sets, repeat=2):
            yield ActivityMatrix(d=d, users=(("u1", first), ("u2", second)))


def _tv(a: np.ndarray, b: np.ndarray) -> float:
    size = max(a.max(), b.max()) + 1
    pa = np.bincount(a, minlength=size) / a.size
    pb = np.bincount(b, minlength=size) / b.size
    return 0.5 * np.abs(pa - pb).sum()


class TestHyperParams:
    @pytest.mark.parametrize("alpha, c, beta", [
        (0.0, 1.0, 1.0), (1.0, 1.0, 1.0), (0.5, 0.0, 1.0), (0.5, 1.0, -1.0), (0.5, math.inf, 1.0),
    ])
    def test_invalid_rejected(self, alpha, c, beta):
        with pytest.raises(DomainError):
            HyperParams(alpha=alpha, c=c, beta=beta)

    def test_dict_round_trip(self):
        hyper = HyperParams(alpha=0.3, c=12.0, beta=0.7)
        assert HyperParams.from_dict(hyper.to_dict()) == hyper

    def test_from_dict_missing_key(self):
        with pytest.raises(DomainError, match="beta"):
            HyperParams.from_dict({"alpha": 0.3, "c": 1.0})


class TestChainRuleConsistency:
    @pytest.mark.parametrize("hyper", HYPER_GRID)
    def test_bernoulli_marginal_equals_sequential_scheme(self, hyper):
        for matrix in _small_datasets():
            marginal = log_marginal_bernoulli(to_stats(matrix), hyper)
            sequential = log_sequential_probability_bernoulli(matrix, hyper)
            assert math.exp(marginal - sequential) == pytest.approx(1.0, rel=1e-8), matrix

    @pytest.mark.parametrize("hyper", HYPER_GRID)
    @pytest.mark.parametrize("firsts", [(), (1,), (2, 2), (1, 3, 3)])
    def test_geometric_marginal_equals_compound_poisson(self, hyper, firsts):
        data = TriggerData(d=3, triggers=tuple((f"u{i}", y) for i, y in enumerate(firsts)))
        marginal = log_marginal_geometric(to_stats(data), hyper)
        assert marginal == pytest.approx(log_compound_poisson_probability(data, hyper), rel=1e-10)

    def test_empty_data_marginal(self):
        hyper = HyperParams(alpha=0.5, c=1.0, beta=1.0)
        gamma = gamma_accum(0.5, 0, 4)
        expected = (hyper.c + 1.0) * (math.log(hyper.beta) - math.log(hyper.beta + gamma))
        assert log_marginal_bernoulli(_make_stats(4, []), hyper) == pytest.approx(expected)

    def test_dispatch_on_kind(self):
        hyper = HYPER_GRID[0]
        bm = _make_stats(3, [1, 2])
        gm = _make_stats(3, [1, 2], kind="gm")
        assert log_marginal(bm, hyper) == log_marginal_bernoulli(bm, hyper)
        assert log_marginal(gm, hyper) == log_marginal_geometric(gm, hyper)

    def test_wrong_kind_rejected(self):
        with pytest.raises(DomainError):
            log_marginal_bernoulli(_make_stats(3, [1], kind="gm"), HYPER_GRID[0])

    def test_large_counts_stay_finite(self):
        stats = _make_stats(365, np.full(100_000, 200))
        value = log_marginal_bernoulli(stats, HyperParams(alpha=0.5, c=1e5, beta=0.5))
        assert math.isfinite(value)

    def test_large_scale_is_smooth_in_c(self):
        stats = _make_stats(14, [1, 1, 2, 3, 5, 8, 13, 14], kind="gm")
        c = 1e19
        values = [
            log_marginal_geometric(stats, HyperParams(alpha=0.3, c=c * f, beta=c / 5000.0))
            for f in (1.0 - 1e-12, 1.0, 1.0 + 1e-12)
        ]
        assert max(values) - min(values) < 1e-6

    def test_large_scale_reaches_poisson_limit(self):
        firsts = np.array([1, 1, 2, 3, 5, 8, 13, 14])
        stats = _make_stats(14, firsts, kind="gm")
        rate = 5000.0
        c = 1e19
        gamma = gamma_accum(0.3, 0, 14)
        limit = (
            firsts.size * (math.log(0.3) + math.log(rate)) - rate * gamma
            + sum(math.lgamma(0.7) + math.lgamma(y) - math.lgamma(0.7 + y) for y in firsts)
        )
        value = log_marginal_geometric(stats, HyperParams(alpha=0.3, c=c, beta=c / rate))
        assert value == pytest.approx(limit, abs=1e-6)


class TestPosterior:
    def test_gamma_parameters(self):
        hyper = HyperParams(alpha=0.4, c=3.0, beta=2.0)
        post = posterior(_make_stats(5, [1, 4, 5]), hyper)
        assert post.delta_shape == pytest.approx(3 + 3.0 + 1.0)
        assert post.delta_rate == pytest.approx(2.0 + gamma_accum(0.4, 0, 5))
        assert post.delta_mean == pytest.approx(post.delta_shape / post.delta_rate)

    def test_models_share_the_posterior(self):
        hyper = HYPER_GRID[1]
        bm = posterior(_make_stats(4, [1, 2, 4]), hyper)
        gm = posterior(_make_stats(4, [3, 1, 1], kind="gm"), hyper)
        assert (bm.delta_shape, bm.delta_rate) == (gm.delta_shape, gm.delta_rate)

    def test_seen_user_jumps_bernoulli_mean(self):
        alpha, d, m = 0.3, 6, 2
        post = posterior(_make_stats(d, np.full(20_000, m)), HyperParams(alpha, 1.0, 1.0))
        jumps = sample_seen_user_jumps(post, RngStream(4))
        assert jumps.shape == (20_000,)
        assert jumps.mean() == pytest.approx((m - alpha) / (d + 1 - alpha), abs=0.005)

    def test_seen_user_jumps_geometric_mean(self):
        alpha, y = 0.6, 3
        post = posterior(_make_stats(5, np.full(20_000, y), kind="gm"), HyperParams(alpha, 1.0, 1.0))
        jumps = sample_seen_user_jumps(post, RngStream(4))
        assert jumps.mean() == pytest.approx((1 - alpha) / (1 - alpha + y), abs=0.005)

    def test_no_seen_users(self):
        post = posterior(_make_stats(2, []), HYPER_GRID[0])
        assert sample_seen_user_jumps(post, RngStream(0)).size == 0


class TestPredictiveLaw:
    def test_trivial_posterior(self):
        post = posterior(_make_stats(1, []), HyperParams(alpha=0.5, c=1.0, beta=1.0))
        law = predict_new_users_law(post, 1)
        assert law.r == pytest.approx(2.0)
        assert law.p == pytest.approx(0.75)
        assert law.mean == pytest.approx(2.0 / 3.0)

    def test_success_probability_formula(self):
        hyper = HyperParams(alpha=0.35, c=50.0, beta=0.5)
        post = posterior(_make_stats(14, [1, 3, 7, 14]), hyper)
        law = predict_new_users_law(post, 14)
        rate = 0.5 + gamma_accum(0.35, 0, 14)
        assert law.r == pytest.approx(4 + 51.0)
        assert law.p == pytest.approx(rate / (rate + gamma_accum(0.35, 14, 14)))

    def test_zero_horizon_rejected(self):
        post = posterior(_make_stats(1, []), HYPER_GRID[0])
        with pytest.raises(DomainError):
            predict_new_users_law(post, 0)

    def test_trajectory_means_end_at_law_mean(self):
        post = posterior(_make_stats(7, [1, 2, 2, 5]), HYPER_GRID[1])
        means = predictive_trajectory_means(post, 30)
        assert np.all(np.diff(means) > 0.0)
        assert means[-1] == pytest.approx(post.n_users + predict_new_users_law(post, 30).mean)

    def test_quantiles_monotone(self):
        post = posterior(_make_stats(7, [1, 2, 2, 5]), HYPER_GRID[1])
        q = posterior_predictive_quantiles(post, 14, (0.05, 0.5, 0.95))
        assert q[0.05] <= q[0.5] <= q[0.95]


class TestPredictiveIdentity:
    ALPHA, C, BETA, D_OBS, D_NEW = 0.5, 1.0, 1.0, 3, 4
    DRAWS = 100_000

    def _prior_law(self, days: int) -> NegBinLaw:
        gamma = gamma_accum(self.ALPHA, 0, days)
        return NegBinLaw(r=self.C + 1.0, p=self.BETA / (self.BETA + gamma))

    def test_two_stage_matches_prior_over_whole_window(self):
        hyper = HyperParams(self.ALPHA, self.C, self.BETA)
        rng_seen, rng_new, rng_direct = RngStream(2024).spawn(3)
        seen = sample_negbin(self._prior_law(self.D_OBS), rng_seen, size=self.DRAWS)
        total = np.empty_like(seen)
        for n_seen in np.unique(seen):
            idx = np.flatnonzero(seen == n_seen)
            stats = _make_stats(self.D_OBS, np.ones(int(n_seen), dtype=np.int64), kind="gm")
            law = predict_new_users_law(posterior(stats, hyper), self.D_NEW)
            total[idx] = n_seen + sample_negbin(law, rng_new, size=idx.size)
        direct = sample_negbin(self._prior_law(self.D_OBS + self.D_NEW), rng_direct,
                               size=self.DRAWS)
        assert _tv(total, direct) < 0.02

