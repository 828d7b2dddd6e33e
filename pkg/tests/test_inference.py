import math

import numpy as np
import pytest
from scipy import stats

from cwce.cwce_engine import History, cwce
from cwce.distributions import Degenerate, Discrete, Gaussian
from cwce.errors import DomainError, NonConvergedFitError, UnsupportedCombinationError
from cwce.inference import (
    ClassificationTable,
    DensityMode,
    bandwidth_nrd0,
    classification_table,
    estimate_cwce,
    estimate_ice,
    ks_distance,
    map_ice,
    marginal_ice_density,
)
from cwce.reml_fit import ModelSpec, PanelView, RemlFit, fit_lmm_reml
from cwce.rng import STREAM_REPLICATE, derive_seed
from cwce.scm_core import simulate_panel


class TestPlugIn:
    def test_true_parameters_reproduce_exact_law(self, gaussian_params, small_gaussian_panel):
        history = History.from_individual(small_gaussian_panel.individuals[2], gaussian_params)
        fit = RemlFit.from_params(gaussian_params)
        estimated = estimate_cwce(fit, history, 4, (1, 1, 0), gaussian_params)
        assert estimated == cwce(history, gaussian_params, 4, (1, 1, 0))

    def test_refuses_non_converged_fit(self, gaussian_params):
        fit = RemlFit.from_params(gaussian_params).model_copy(update={"converged": False})
        with pytest.raises(NonConvergedFitError):
            estimate_cwce(fit, History.empty(), 3, (1, 1), gaussian_params)

    def test_point_estimate_is_mode(self, gaussian_params):
        estimate = estimate_ice(RemlFit.from_params(gaussian_params), History.empty(), 3, (1, 1), gaussian_params)
        assert estimate.point == pytest.approx(-15.0)
        assert estimate.expected_cwce == pytest.approx(-15.0)

    def test_map_of_tied_pmf_is_zero(self):
        assert map_ice(Discrete(0.4, 0.4, 0.2)) == 0.0


class TestBandwidth:
    def test_rule_of_thumb(self):
        assert bandwidth_nrd0([1.0, 2.0, 3.0, 4.0, 5.0]) == pytest.approx(0.9 * (2.0 / 1.34) * 5 ** -0.2)

    def test_constant_values(self):
        assert bandwidth_nrd0([3.0, 3.0, 3.0]) == pytest.approx(0.9 * 3.0 * 3 ** -0.2)

    def test_needs_two_values(self):
        with pytest.raises(DomainError):
            bandwidth_nrd0([1.0])


class TestMarginalDensity:
    def test_average_of_gaussians(self):
        grid = marginal_ice_density([Gaussian(-1.0, 1.0), Gaussian(1.0, 1.0)], DensityMode.AVERAGE_DENSITY)
        assert grid.mean() == pytest.approx(0.0, abs=1e-6)
        assert grid.variance() == pytest.approx(2.0, rel=1e-3)

    def test_kernel_of_expectations(self):
        laws = [Degenerate(v) for v in (-2.0, 0.0, 2.0)]
        grid = marginal_ice_density(laws, "KernelOfExpectations", bandwidth=0.5)
        assert grid.mean() == pytest.approx(0.0, abs=1e-6)
        assert grid.points[0] == pytest.approx(-3.5)
        assert grid.variance() == pytest.approx(8.0 / 3.0 + 0.25, rel=2e-2)

    def test_average_needs_densities(self):
        with pytest.raises(UnsupportedCombinationError):
            marginal_ice_density([Discrete(0.2, 0.5, 0.3), Discrete(0.1, 0.8, 0.1)], DensityMode.AVERAGE_DENSITY)

    def test_needs_two_laws(self):
        with pytest.raises(DomainError):
            marginal_ice_density([Gaussian(0.0, 1.0)], DensityMode.AVERAGE_DENSITY)


class TestKsDistance:
    def test_identical_laws(self):
        assert ks_distance(Gaussian(0.0, 1.0), Gaussian(0.0, 1.0)) == 0.0

    def test_shifted_gaussians(self):
        expected = 2.0 * stats.norm.cdf(0.5) - 1.0
        assert ks_distance(Gaussian(0.0, 1.0), Gaussian(1.0, 1.0)) == pytest.approx(expected, abs=1e-3)

    def test_pmfs(self):
        assert ks_distance(Discrete(0.2, 0.5, 0.3), Discrete(0.3, 0.5, 0.2)) == pytest.approx(0.1)

    def test_point_masses(self):
        assert ks_distance(Degenerate(0.0), Degenerate(1.0)) == 1.0


class TestClassification:
    def test_table_of_true_parameters(self, truncated_params):
        panel = simulate_panel(truncated_params, 30, 4, seed=13)
        table = classification_table(panel, RemlFit.from_params(truncated_params), 3, (1, 1), threads=2)
        assert table.matrix.sum() == pytest.approx(1.0)
        assert 0.0 <= table.misclassification() <= 1.0
        rows = table.row_normalized()
        assert np.all((np.isclose(rows.sum(axis=1), 1.0)) | (rows.sum(axis=1) == 0.0))

    def test_requires_thresholded_kind(self, gaussian_params, small_gaussian_panel):
        with pytest.raises(UnsupportedCombinationError):
            classification_table(small_gaussian_panel, RemlFit.from_params(gaussian_params), 3, (1, 1))

    def test_perfect_table(self):
        table = ClassificationTable(np.diag([0.2, 0.5, 0.3]))
        assert table.misclassification() == pytest.approx(0.0, abs=1e-15)

    def test_invalid_table(self):
        with pytest.raises(DomainError):
            ClassificationTable(np.ones((3, 3)))


def test_average_density_tracks_population_law(gaussian_params, small_gaussian_panel):
    laws = [
        cwce(History.from_individual(ind, gaussian_params, 0), gaussian_params, 3, (1, 1))
        for ind in small_gaussian_panel.individuals[:3]
    ]
    grid = marginal_ice_density(laws, DensityMode.AVERAGE_DENSITY)
    assert grid.mean() == pytest.approx(-15.0, abs=1e-3)
    assert math.sqrt(grid.variance()) == pytest.approx(math.sqrt(125.0), rel=1e-3)


@pytest.mark.slow
def test_plug_in_laws_approach_exact_ones_as_n_grows(gaussian_params):
    held_out = simulate_panel(gaussian_params, 100, 3, seed=2718)
    histories = [History.from_individual(ind, gaussian_params) for ind in held_out.individuals]
    exact = [cwce(history, gaussian_params, 3, (1, 1)) for history in histories]
    sizes = (100, 500, 1000)
    medians = np.zeros((20, len(sizes)))
    for r in range(20):
        panel = simulate_panel(gaussian_params, 1000, 100, derive_seed(20240607, STREAM_REPLICATE, r), threads=4)
        for j, n in enumerate(sizes):
            fit = fit_lmm_reml(PanelView.from_panel(panel.subset(n, 100), ModelSpec()))
            assert fit.converged
            distances = [
                ks_distance(estimate_cwce(fit, history, 3, (1, 1), gaussian_params), law)
                for history, law in zip(histories, exact)
            ]
            medians[r, j] = np.median(distances)
    mean_median = medians.mean(axis=0)
    assert mean_median[0] >= mean_median[1] >= mean_median[2]
    assert mean_median[2] < 0.05


@pytest.mark.slow
def test_misclassification_shrinks_with_the_design(truncated_params):
    small, large = [], []
    for r in range(20):
        panel = simulate_panel(truncated_params, 1000, 100, derive_seed(20240607, STREAM_REPLICATE, r), threads=4)
        rates = []
        for n, m in ((100, 3), (1000, 100)):
            sub = panel.subset(n, m)
            fit = fit_lmm_reml(PanelView.from_panel(sub, ModelSpec.for_kind(truncated_params.kind)))
            if not fit.converged:
                break
            rates.append(classification_table(sub, fit, 3, (1, 1), threads=4).misclassification())
        else:
            small.append(rates[0])
            large.append(rates[1])
    small, large = np.array(small), np.array(large)
    assert small.size >= 15
    assert small.mean() == pytest.approx(0.10, abs=0.04)
    assert large.mean() == pytest.approx(0.05, abs=0.02)
    # One hundred individuals give the small design a sd of about 0.03 per seed
    assert np.sum(small > large) >= small.size - 3
