import numpy as np
import pytest
from scipy import stats

from cwce.distributions import CwceDistribution, Degenerate, Discrete, Gaussian, Grid
from cwce.errors import DomainError


class TestGaussian:
    def test_moments(self):
        law = Gaussian(-15.0, 125.0)
        assert law.mean() == law.mode() == -15.0
        assert law.sd == pytest.approx(125.0 ** 0.5)
        assert law.cdf(-15.0) == pytest.approx(0.5)

    def test_negative_variance(self):
        with pytest.raises(DomainError):
            Gaussian(0.0, -1.0)

    def test_zero_variance_cdf_is_step(self):
        assert Gaussian(2.0, 0.0).cdf([1.0, 2.0, 3.0]).tolist() == [0.0, 1.0, 1.0]


class TestGrid:
    def test_normalized_matches_gaussian(self):
        x = np.linspace(-8.0, 8.0, 2001)
        grid = Grid.normalized(x, 3.0 * stats.norm.pdf(x))
        assert grid.mean() == pytest.approx(0.0, abs=1e-10)
        assert grid.variance() == pytest.approx(1.0, abs=1e-4)
        assert grid.mode() == pytest.approx(0.0, abs=1e-12)
        assert grid.cdf(0.0) == pytest.approx(0.5, abs=1e-6)

    def test_unnormalized_rejected(self):
        x = np.linspace(0.0, 1.0, 11)
        with pytest.raises(DomainError):
            Grid(x, np.full(11, 2.0))

    def test_unsorted_points_rejected(self):
        with pytest.raises(DomainError):
            Grid.normalized([0.0, 2.0, 1.0], [1.0, 1.0, 1.0])

    def test_pdf_zero_outside(self):
        grid = Grid.normalized([0.0, 1.0], [1.0, 1.0])
        assert grid.pdf([-1.0, 0.5, 2.0]).tolist() == [0.0, 1.0, 0.0]


class TestDiscrete:
    def test_mean_and_variance(self):
        law = Discrete(0.2, 0.5, 0.3)
        assert law.mean() == pytest.approx(0.1)
        assert law.variance() == pytest.approx(0.5 - 0.01)

    def test_pmf_must_sum_to_one(self):
        with pytest.raises(DomainError):
            Discrete(0.2, 0.2, 0.2)

    def test_normalized_sums_exactly(self):
        law = Discrete.normalized(1.0, 1.0, 1.0)
        assert law.probs.sum() == 1.0

    @pytest.mark.parametrize(
        "probs,expected",
        [((0.4, 0.2, 0.4), -1.0), ((0.35, 0.35, 0.3), 0.0), ((0.1, 0.3, 0.6), 1.0), ((0.6, 0.1, 0.3), -1.0)],
    )
    def test_mode_tie_breaking(self, probs, expected):
        assert Discrete(*probs).mode() == expected

    def test_cdf_steps(self):
        law = Discrete(0.2, 0.5, 0.3)
        assert law.cdf([-2.0, -1.0, 0.0, 0.5, 1.0]) == pytest.approx([0.0, 0.2, 0.7, 0.7, 1.0])


def test_degenerate():
    law = Degenerate(-7.5)
    assert law.mean() == law.mode() == -7.5
    assert law.variance() == 0.0


@pytest.mark.parametrize(
    "law",
    [Gaussian(1.5, 2.0), Discrete(0.25, 0.5, 0.25), Degenerate(3.0), Grid.normalized([0.0, 1.0, 2.0], [0.0, 1.0, 0.0])],
)
def test_dictionary_form_rebuilds_law(law):
    rebuilt = CwceDistribution.from_dict(law.to_dict())
    assert type(rebuilt) is type(law)
    assert rebuilt.mean() == pytest.approx(law.mean())


def test_unknown_kind():
    with pytest.raises(DomainError):
        CwceDistribution.from_dict({"kind": "beta"})
