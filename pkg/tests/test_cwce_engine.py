import math

import numpy as np
import pytest

from cwce.cwce_engine import (
    History,
    cwce,
    cwce_crossover,
    cwce_gaussian,
    cwce_lognormal,
    cwce_lognormal_moments,
    cwce_monte_carlo,
    cross_world_joint_truncated,
    latent_posterior,
    predict_potential_outcome,
)
from cwce.distributions import Degenerate, Discrete, Gaussian, Grid
from cwce.errors import DimensionError, DomainError, UnsupportedCombinationError, UnsupportedQueryError
from cwce.scm_core import simulate_panel, true_ice


def _history(params, h, seed=21, index=0, m=6):
    ind = simulate_panel(params, index + 1, max(m, h), seed=seed).individuals[index]
    return History.from_individual(ind, params, h), ind


class TestHistory:
    def test_lengths_must_match(self):
        with pytest.raises(DimensionError):
            History(2, [0, 1], [0.0], [1.0, 2.0])

    def test_exposures_binary(self):
        with pytest.raises(DomainError):
            History(1, [2], [0.0], [1.0])

    def test_from_individual_truncates(self, small_gaussian_panel, gaussian_params):
        ind = small_gaussian_panel.individuals[3]
        history = History.from_individual(ind, gaussian_params, 4)
        assert history.h == 4
        assert np.array_equal(history.y, ind.y[:4])

    def test_crossover_hides_baseline(self, crossover_params):
        ind = simulate_panel(crossover_params, 1, 3, seed=1).individuals[0]
        history = History.from_individual(ind, crossover_params)
        assert np.isnan(history.y[0])

    def test_lognormal_outcomes_positive(self, lognormal_params):
        with pytest.raises(DomainError):
            History(1, [0], [0.0], [-1.0]).linear_outcomes(lognormal_params)


class TestGaussianCwce:
    def test_empty_history_is_population_law(self, gaussian_params):
        law = cwce_gaussian(History.empty(), gaussian_params, 3, (1, 1))
        assert isinstance(law, Gaussian)
        assert law.mean() == pytest.approx(-15.0)
        assert law.variance() == pytest.approx(125.0)

    def test_reference_regime_is_point_mass(self, gaussian_params):
        assert cwce_gaussian(History.empty(), gaussian_params, 3, (0, 0)) == Degenerate(0.0)

    def test_needs_an_exposure_time(self, gaussian_params):
        with pytest.raises(DomainError):
            cwce_gaussian(History.empty(), gaussian_params, 1, ())

    def test_wrong_kind(self, lognormal_params):
        with pytest.raises(UnsupportedCombinationError):
            cwce_gaussian(History.empty(), lognormal_params, 3, (1, 1))

    def test_history_shrinks_variance(self, gaussian_params):
        history, _ = _history(gaussian_params, 6)
        law = cwce_gaussian(history, gaussian_params, 3, (1, 1))
        assert law.variance() < 125.0

    def test_posterior_centres_on_latents_for_long_histories(self, gaussian_params):
        history, ind = _history(gaussian_params, 60, m=60)
        law = cwce(history, gaussian_params, 3, (1, 1))
        assert abs(law.mean() - true_ice(ind, gaussian_params, (1, 1), 3)) < 4 * math.sqrt(law.variance()) + 1e-9

    def test_matches_monte_carlo(self, gaussian_params):
        history, _ = _history(gaussian_params, 5)
        law = cwce(history, gaussian_params, 4, (1, 0, 1))
        mc = cwce_monte_carlo(history, gaussian_params, 4, (1, 0, 1), n_draws=40_000, seed=5)
        assert abs(mc.samples.mean() - law.mean()) <= 4 * mc.standard_error()
        assert mc.samples.var(ddof=1) == pytest.approx(law.variance(), rel=0.05)


class TestMonteCarlo:
    def test_deterministic_in_seed(self, gaussian_params):
        history, _ = _history(gaussian_params, 3)
        first = cwce_monte_carlo(history, gaussian_params, 5, (1, 1, 1, 1), n_draws=1000, seed=9, block_size=128)
        second = cwce_monte_carlo(history, gaussian_params, 5, (1, 1, 1, 1), n_draws=1000, seed=9, block_size=128)
        assert np.array_equal(first.samples, second.samples)
        assert first.n_blocks == 8

    def test_rejects_crossover(self, crossover_params):
        with pytest.raises(UnsupportedCombinationError):
            cwce_monte_carlo(History.empty(), crossover_params, 3, (1, 0), n_draws=10, seed=1)

    def test_rejects_empty_draws(self, gaussian_params):
        with pytest.raises(DomainError):
            cwce_monte_carlo(History.empty(), gaussian_params, 3, (1, 1), n_draws=0, seed=1)


class TestTruncatedCwce:
    def test_joint_pmf_sums_to_one(self, truncated_params):
        history, _ = _history(truncated_params, 4)
        joint = cross_world_joint_truncated(history, truncated_params, 3, (1, 1))
        assert joint.pmf.sum() == pytest.approx(1.0, abs=1e-12)

    def test_matches_monte_carlo(self, truncated_params):
        history, _ = _history(truncated_params, 4)
        law = cwce(history, truncated_params, 3, (1, 1))
        assert isinstance(law, Discrete)
        mc = cwce_monte_carlo(history, truncated_params, 3, (1, 1), n_draws=40_000, seed=2).distribution
        assert mc.probs == pytest.approx(law.probs, abs=0.015)

    def test_future_time_mixes_confounder(self, truncated_params):
        history, _ = _history(truncated_params, 2)
        law = cwce(history, truncated_params, 5, (1, 1, 1, 1))
        mc = cwce_monte_carlo(history, truncated_params, 5, (1, 1, 1, 1), n_draws=40_000, seed=4).distribution
        assert mc.probs == pytest.approx(law.probs, abs=0.015)


class TestLognormalCwce:
    def test_grid_mean_matches_exact_moments(self, lognormal_params):
        history, _ = _history(lognormal_params, 4)
        mean, var = cwce_lognormal_moments(history, lognormal_params, 3, (1, 1))
        law = cwce_lognormal(history, lognormal_params, 3, (1, 1))
        assert isinstance(law, Grid)
        assert law.mean() == pytest.approx(mean, abs=0.05 * math.sqrt(var))

    def test_moments_match_monte_carlo(self, lognormal_params):
        history, _ = _history(lognormal_params, 4)
        mean, var = cwce_lognormal_moments(history, lognormal_params, 4, (1, 1, 1))
        mc = cwce_monte_carlo(history, lognormal_params, 4, (1, 1, 1), n_draws=40_000, seed=8)
        assert abs(mc.samples.mean() - mean) <= 4 * mc.standard_error()

    def test_future_needs_opt_in(self, lognormal_params):
        history, _ = _history(lognormal_params, 3)
        with pytest.raises(UnsupportedQueryError):
            cwce_lognormal(history, lognormal_params, 5, (1, 1, 1, 1))
        law = cwce_lognormal(history, lognormal_params, 5, (1, 1, 1, 1), allow_future=True)
        assert isinstance(law, Grid)

    def test_reference_regime_is_point_mass(self, lognormal_params):
        history, _ = _history(lognormal_params, 4)
        assert cwce_lognormal(history, lognormal_params, 3, (0, 0)) == Degenerate(0.0)


class TestCrossoverCwce:
    def test_point_mass_is_true_effect(self, crossover_params):
        panel = simulate_panel(crossover_params, 40, 3, seed=12)
        for ind in panel.individuals:
            history = History.from_individual(ind, crossover_params)
            for k, regime in ((2, (1,)), (3, (0, 1)), (3, (1, 1))):
                law = cwce(history, crossover_params, k, regime)
                expected = true_ice(ind, crossover_params, regime, k)
                assert abs(law.mean() - expected) <= 1e-12 * max(1.0, abs(expected))

    def test_unexposed_previous_period_has_no_effect(self, crossover_params):
        ind = simulate_panel(crossover_params, 1, 3, seed=12).individuals[0]
        history = History.from_individual(ind, crossover_params)
        assert cwce(history, crossover_params, 3, (1, 0)) == Degenerate(0.0)
        assert true_ice(ind, crossover_params, (1, 0), 3) == 0.0

    @pytest.mark.parametrize("k", [1, 4])
    def test_rejects_times_without_preceding_exposure(self, crossover_params, k):
        ind = simulate_panel(crossover_params, 1, 3, seed=12).individuals[0]
        history = History.from_individual(ind, crossover_params)
        with pytest.raises(UnsupportedQueryError):
            cwce(history, crossover_params, k, (1, 1, 1))

    def test_exposure_order(self):
        assert cwce_crossover(100.0, 110.0, 1).value == -10.0
        assert cwce_crossover(110.0, 100.0, 0).value == -10.0

    def test_bad_exposure(self):
        with pytest.raises(DomainError):
            cwce_crossover(1.0, 2.0, 2)

    def test_needs_both_periods(self, crossover_params):
        with pytest.raises(DimensionError):
            cwce(History(2, [1, 0], [0.0, 0.0], [np.nan, 100.0]), crossover_params, 3, (1, 0))


class TestPrediction:
    def test_first_outcome_without_history(self, gaussian_params):
        law = predict_potential_outcome(History.empty(), gaussian_params, 1, ())
        assert isinstance(law, Gaussian)
        assert law.mean() == pytest.approx(120.0)
        assert law.variance() == pytest.approx(26.0)

    def test_unobserved_confounder_gives_mixture(self, gaussian_params):
        law = predict_potential_outcome(History.empty(), gaussian_params, 3, (1, 1))
        assert isinstance(law, Grid)
        assert law.mean() == pytest.approx(105.0, abs=0.05)

    def test_truncated_prediction_has_no_negative_mass(self, truncated_params):
        history, _ = _history(truncated_params, 3)
        law = predict_potential_outcome(history, truncated_params, 4, (1, 1, 1))
        assert law.p_minus1 == 0.0
        assert 0.0 <= law.p_plus1 <= 1.0

    def test_crossover_unsupported(self, crossover_params):
        with pytest.raises(UnsupportedCombinationError):
            predict_potential_outcome(History.empty(), crossover_params, 2, (1,))

    def test_posterior_of_empty_history_is_prior(self, gaussian_params):
        posterior = latent_posterior(History.empty(), gaussian_params)
        assert posterior.cov == pytest.approx(gaussian_params.latent_cov)
