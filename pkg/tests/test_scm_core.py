import math

import numpy as np
import pytest

from cwce.distributions import Gaussian
from cwce.errors import DimensionError, DomainError, ParameterValidationError, UnsupportedCombinationError
from cwce.gauss_kit import std_normal_cdf
from cwce.scm_core import (
    EffectMeasure,
    ExposureRegime,
    Individual,
    ScmKind,
    ScmParams,
    closed_form_effect,
    ice_distribution,
    panel_true_ices,
    potential_outcome,
    simulate_panel,
    true_eice,
    true_ice,
)


def _individual(u=(0.0, 0.0, 0.0), c=(0.0, 0.0, 0.0), noise=(0.0, 0.0, 0.0)):
    m = len(c)
    return Individual.from_arrays(
        u=u, noise_y=noise, noise_a=np.ones(m), c=c, a=np.zeros(m, dtype=int), y=np.full(m, 120.0)
    )


class TestScmParams:
    def test_presets_validate(self):
        for preset in (ScmParams.gaussian_preset, ScmParams.lognormal_preset,
                       ScmParams.truncated_preset, ScmParams.crossover_preset):
            assert preset().check() == preset()

    def test_confounder_law_must_sum_to_one(self):
        with pytest.raises(ParameterValidationError):
            ScmParams.create(kind="GaussianLmm", confounder_law=((0.7, 0.3), (-0.3, 0.6)))

    def test_negative_scale_rejected(self):
        with pytest.raises(ParameterValidationError):
            ScmParams.create(kind="GaussianLmm", tau1=-1.0)

    def test_latent_corr_must_be_psd(self):
        corr = ((1.0, 0.9, 0.9), (0.9, 1.0, -0.9), (0.9, -0.9, 1.0))
        with pytest.raises(ParameterValidationError):
            ScmParams.create(kind="GaussianLmm", latent_corr=corr)

    def test_unknown_field_rejected(self):
        with pytest.raises(ParameterValidationError):
            ScmParams.create(kind="GaussianLmm", gamma=120.0)

    def test_crossover_has_no_noise(self):
        with pytest.raises(ParameterValidationError):
            ScmParams.crossover_preset().replace(sigma=1.0)

    def test_latent_cov_uses_correlation(self, gaussian_params):
        corr = ((1.0, 0.5, 0.0), (0.5, 1.0, 0.0), (0.0, 0.0, 1.0))
        cov = gaussian_params.replace(latent_corr=corr).latent_cov
        assert cov[0, 1] == pytest.approx(0.5 * 5.0 * 10.0)
        assert np.diag(cov) == pytest.approx([25.0, 100.0, 25.0])


class TestExposureRegime:
    def test_lags(self):
        regime = ExposureRegime((1, 0, 1))
        assert regime.lags(1) == (0, 0)
        assert regime.lags(2) == (1, 0)
        assert regime.lags(4) == (1, 0)

    def test_too_short(self):
        with pytest.raises(DimensionError):
            ExposureRegime((1,)).lags(3)

    def test_entries_binary(self):
        with pytest.raises(DomainError):
            ExposureRegime((1, 2))


class TestSimulation:
    def test_deterministic(self, gaussian_params):
        first = simulate_panel(gaussian_params, 5, 4, seed=11)
        second = simulate_panel(gaussian_params, 5, 4, seed=11)
        for a, b in zip(first.individuals, second.individuals):
            assert np.array_equal(a.y, b.y)
            assert np.array_equal(a.u, b.u)
            assert np.array_equal(a.a, b.a)

    def test_independent_of_thread_count(self, lognormal_params):
        serial = simulate_panel(lognormal_params, 12, 5, seed=3, threads=1)
        parallel = simulate_panel(lognormal_params, 12, 5, seed=3, threads=4)
        for a, b in zip(serial.individuals, parallel.individuals):
            assert np.array_equal(a.y, b.y)
            assert np.array_equal(a.noise_a, b.noise_a)

    def test_prefix_stable_in_n(self, gaussian_params):
        small = simulate_panel(gaussian_params, 3, 4, seed=5)
        large = simulate_panel(gaussian_params, 6, 4, seed=5)
        for a, b in zip(small.individuals, large.individuals):
            assert np.array_equal(a.y, b.y)

    def test_rejects_short_panels(self, gaussian_params, crossover_params):
        with pytest.raises(DomainError):
            simulate_panel(gaussian_params, 5, 2, seed=1)
        with pytest.raises(DomainError):
            simulate_panel(crossover_params, 5, 4, seed=1)
        with pytest.raises(DomainError):
            simulate_panel(gaussian_params, 0, 3, seed=1)

    @pytest.mark.parametrize("preset", ["gaussian_preset", "lognormal_preset", "truncated_preset", "crossover_preset"])
    def test_consistency_is_bit_exact(self, preset):
        params = getattr(ScmParams, preset)()
        m = 3 if params.kind == ScmKind.CROSSOVER else 8
        panel = simulate_panel(params, 25, m, seed=99)
        for ind in panel.individuals:
            for k in range(1, m + 1):
                factual = tuple(int(v) for v in ind.a[: k - 1])
                assert potential_outcome(ind, params, factual, k) == ind.factual_outcome(k)

    def test_threshold_indicator(self, truncated_params):
        panel = simulate_panel(truncated_params, 10, 5, seed=2)
        for ind in panel.individuals:
            assert np.array_equal(ind.d, (ind.y > truncated_params.delta).astype(int))

    def test_lognormal_outcomes_positive(self, lognormal_params):
        panel = simulate_panel(lognormal_params, 10, 5, seed=2)
        assert all(np.all(ind.y > 0) for ind in panel.individuals)

    def test_crossover_exposes_exactly_once(self, crossover_params):
        panel = simulate_panel(crossover_params, 50, 3, seed=4)
        for ind in panel.individuals:
            assert ind.a[0] + ind.a[1] == 1

    def test_subset_truncates(self, small_gaussian_panel):
        sub = small_gaussian_panel.subset(5, 3)
        assert sub.n == 5 and sub.m == 3
        assert np.array_equal(sub.individuals[0].y, small_gaussian_panel.individuals[0].y[:3])
        with pytest.raises(DimensionError):
            small_gaussian_panel.subset(21, 3)

    @pytest.mark.slow
    def test_first_outcome_mean(self, gaussian_params):
        panel = simulate_panel(gaussian_params, 100_000, 3, seed=2024, threads=4)
        y1 = np.array([ind.y[0] for ind in panel.individuals])
        assert y1.mean() == pytest.approx(120.0, abs=0.1)


class TestPotentialOutcomes:
    def test_exposed_regime_without_latents(self, gaussian_params):
        assert potential_outcome(_individual(), gaussian_params, (1, 1), 3) == pytest.approx(105.0)

    def test_threshold_indicator_of_potential_outcome(self, truncated_params):
        assert potential_outcome(_individual(), truncated_params, (1, 1), 3) == 0.0

    def test_zero_latents_reference_regime(self, gaussian_params):
        ind = _individual(noise=(0.3, -0.2, 0.1))
        values = [potential_outcome(ind, gaussian_params, (0, 0), k) for k in (1, 2, 3)]
        assert values == pytest.approx([120.3, 119.8, 120.1])

    def test_regime_too_short(self, gaussian_params):
        with pytest.raises(DimensionError):
            potential_outcome(_individual(), gaussian_params, (1,), 3)

    def test_true_ice_receptiveness(self, gaussian_params):
        ind = _individual(u=(0.0, 5.0, -2.0))
        assert true_ice(ind, gaussian_params, (1, 1), 3) == pytest.approx(-12.0)

    def test_true_ice_reference_regime(self, gaussian_params):
        ind = _individual(u=(1.0, 5.0, -2.0))
        assert true_ice(ind, gaussian_params, (0, 0), 3) == 0.0

    def test_truncated_ice_support(self, truncated_params):
        panel = simulate_panel(truncated_params, 200, 4, seed=8)
        values = set(panel_true_ices(panel, (1, 1), 3).tolist())
        assert values <= {-1.0, 0.0, 1.0}

    def test_crossover_ice_is_receptiveness(self, crossover_params):
        panel = simulate_panel(crossover_params, 100, 3, seed=6)
        for ind in panel.individuals:
            expected = crossover_params.beta1 + ind.u1
            assert true_ice(ind, crossover_params, (1, 1), 2) == pytest.approx(expected, abs=1e-12)
            assert true_ice(ind, crossover_params, (1, 1), 3) == pytest.approx(expected, abs=1e-12)


class TestEice:
    def test_gaussian_eice_equals_ice(self, gaussian_params, small_gaussian_panel):
        for ind in small_gaussian_panel.individuals:
            assert true_eice(ind, gaussian_params, (1, 1), 3) == true_ice(ind, gaussian_params, (1, 1), 3)

    def test_truncated_eice_without_latents(self, truncated_params):
        ind = _individual(c=(0.0, 0.7, 0.0))
        value = true_eice(ind, truncated_params, (1, 1), 3)
        expected = float(std_normal_cdf(-11.5) - std_normal_cdf(3.5))
        assert value == pytest.approx(expected, abs=1e-12)
        assert value == pytest.approx(-0.99977, abs=1e-5)
        assert true_eice(_individual(), truncated_params, (1, 1), 3, c_value=0.7) == pytest.approx(value)

    def test_truncated_eice_matches_noise_average(self, truncated_params):
        ind = _individual(u=(2.0, 4.0, -1.0), c=(0.0, -0.3, 0.0))
        noise = np.random.default_rng(0).standard_normal(1_000_000)
        base = 120.0 + 2.0 + 5.0 * -0.3
        effect = (-10.0 + 4.0) + (-5.0 - 1.0)
        mc = np.mean((base + effect + noise > 120.0).astype(float) - (base + noise > 120.0))
        assert true_eice(ind, truncated_params, (1, 1), 3) == pytest.approx(mc, abs=5e-3)

    def test_lognormal_eice_without_noise_equals_ice(self, lognormal_params):
        params = lognormal_params.replace(sigma=0.0)
        ind = _individual(u=(0.1, -0.3, 0.2), c=(0.0, 0.5, 0.0))
        assert true_eice(ind, params, (1, 1), 3) == pytest.approx(true_ice(ind, params, (1, 1), 3), rel=1e-12)


class TestClosedForm:
    def test_gaussian_ace(self, gaussian_params):
        assert closed_form_effect(gaussian_params, EffectMeasure.ACE, (1, 1), 3) == -15.0

    def test_lognormal_cace(self, lognormal_params):
        assert closed_form_effect(lognormal_params, "CACE", (1, 1), 3, 0.5) == pytest.approx(-1.05, abs=0.005)
        assert closed_form_effect(lognormal_params, "CACE", (1, 1), 3, -0.5) == pytest.approx(-0.02, abs=0.005)

    def test_truncated_measures(self, truncated_params):
        assert closed_form_effect(truncated_params, "ACE", (1, 1), 3) == pytest.approx(-0.38, abs=0.005)
        assert closed_form_effect(truncated_params, "CACE", (1, 1), 3, 0.7) == pytest.approx(-0.58, abs=0.005)
        assert closed_form_effect(truncated_params, "CACE", (1, 1), 3, -0.3) == pytest.approx(-0.29, abs=0.005)

    @pytest.mark.parametrize("preset", ["lognormal_preset", "truncated_preset"])
    def test_ace_decomposes_over_confounder(self, preset):
        params = getattr(ScmParams, preset)()
        ace = closed_form_effect(params, "ACE", (1, 1), 3)
        weighted = sum(p * closed_form_effect(params, "CACE", (1, 1), 3, c) for c, p in params.confounder_law)
        assert ace == pytest.approx(weighted, abs=1e-12)

    def test_cace_needs_confounder(self, truncated_params, crossover_params):
        with pytest.raises(UnsupportedCombinationError):
            closed_form_effect(truncated_params, "CACE", (1, 1), 3)
        with pytest.raises(UnsupportedCombinationError):
            closed_form_effect(crossover_params, "CACE", (1, 1), 3, 0.0)

    def test_first_time_has_no_effect(self, lognormal_params):
        assert closed_form_effect(lognormal_params, "ACE", (), 1) == 0.0

    @pytest.mark.slow
    @pytest.mark.parametrize("preset", ["gaussian_preset", "lognormal_preset", "truncated_preset"])
    def test_ace_matches_simulated_mean(self, preset):
        params = getattr(ScmParams, preset)()
        panel = simulate_panel(params, 100_000, 3, seed=31, threads=4)
        ices = panel_true_ices(panel, (1, 1), 3)
        se = ices.std(ddof=1) / math.sqrt(ices.size)
        assert abs(ices.mean() - closed_form_effect(params, "ACE", (1, 1), 3)) <= 4 * se


class TestIceDistribution:
    def test_gaussian_population_law(self, gaussian_params):
        law = ice_distribution(gaussian_params, (1, 1), 3)
        assert isinstance(law, Gaussian)
        assert law.mean() == -15.0
        assert law.variance() == pytest.approx(125.0)

    def test_unsupported_kind(self, lognormal_params):
        with pytest.raises(UnsupportedCombinationError):
            ice_distribution(lognormal_params, (1, 1), 3)

    @pytest.mark.slow
    def test_simulated_ice_moments(self, gaussian_params):
        panel = simulate_panel(gaussian_params, 100_000, 3, seed=17, threads=4)
        ices = panel_true_ices(panel, (1, 1), 3)
        assert ices.mean() == pytest.approx(-15.0, abs=0.15)
        assert ices.var(ddof=1) == pytest.approx(125.0, abs=3.0)
