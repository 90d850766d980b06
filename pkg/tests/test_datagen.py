import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from prevcorr.datagen import (FiniteCovariates, GaussianMixtureCovariates, LungLikeCovariates, PopulationSpec,
                              conditional_x_given_y, contingency_dataset, covariates_from_dict,
                              sample_label_biased, sample_true_population, sample_via_selection,
                              selection_probability, standardize)
from prevcorr.models import ModelSpec


def finite_pop(w=(1.2, -1.5)):
    cov = FiniteCovariates(np.array([[0.0], [1.0], [2.0], [3.0]]), np.array([0.4, 0.3, 0.2, 0.1]))
    return PopulationSpec(cov, ModelSpec("logistic-binary", 1), np.array(w))


def gauss_pop():
    cov = GaussianMixtureCovariates((1.0,), ((0.0,),), (1.0,))
    return PopulationSpec(cov, ModelSpec("logistic-binary", 1), np.array([2.0, -2.5]))


def _se(p, n):
    return np.sqrt(p * (1 - p) / n)


class TestTruePopulation:
    def test_empty(self):
        ds = sample_true_population(finite_pop(), 0, 1)
        assert ds.X.shape == (0, 1) and ds.y.size == 0

    def test_degenerate_labels(self):
        ds = sample_true_population(finite_pop((0.0, -60.0)), 500, 1)
        assert_array_equal(ds.y, 0)

    @pytest.mark.parametrize("make", [finite_pop, gauss_pop])
    def test_label_frequency(self, make):
        pop = make()
        ds = sample_true_population(pop, 100_000, 3)
        p1 = pop.true_prevalence()[1]
        assert abs(ds.y.mean() - p1) < 3 * _se(p1, 100_000)

    def test_lung_like_prevalence(self):
        spec = ModelSpec("logistic-binary", 7)
        w = np.array([0.8, 1.2, 0.5, -0.4, 0.9, 0.3, -0.2, -2.0])
        pop = PopulationSpec(LungLikeCovariates(), spec, w)
        ds = sample_true_population(pop, 100_000, 5)
        assert ds.X.shape == (100_000, 7)
        assert set(np.unique(ds.X[:, 2:])) <= {0.0, 1.0}
        p1 = pop.true_prevalence()[1]
        assert abs(ds.y.mean() - p1) < 3 * _se(p1, 100_000)

    def test_deterministic(self):
        a = sample_true_population(gauss_pop(), 1000, 9)
        b = sample_true_population(gauss_pop(), 1000, 9)
        assert_array_equal(a.X, b.X)
        assert_array_equal(a.y, b.y)
        assert not np.array_equal(a.X, sample_true_population(gauss_pop(), 1000, 10).X)


class TestLabelBiased:
    def test_exact_counts(self):
        ds = sample_label_biased(gauss_pop(), {"counts": [50, 50]}, None, 2)
        assert_array_equal(np.bincount(ds.y), [50, 50])
        with pytest.raises(ValueError):
            sample_label_biased(gauss_pop(), {"counts": [50, 50]}, 99, 2)

    def test_analytic_conditional(self):
        pop = finite_pop()
        C = conditional_x_given_y(pop)
        px = np.array([0.4, 0.3, 0.2, 0.1])
        s = 1 / (1 + np.exp(-(1.2 * np.arange(4) - 1.5)))
        ref1 = px * s / (px * s).sum()
        ref0 = px * (1 - s) / (px * (1 - s)).sum()
        assert_allclose(C, [ref0, ref1], atol=1e-12)

    def test_chi_square_per_label(self):
        pop = finite_pop()
        ds = sample_label_biased(pop, {"probs": [0.5, 0.5]}, 100_000, 4)
        C = conditional_x_given_y(pop)
        for k in range(2):
            xs = ds.X[ds.y == k, 0].astype(int)
            obs = np.bincount(xs, minlength=4)
            res = stats.chisquare(obs, C[k] * obs.sum())
            assert res.pvalue > 1e-3

    def test_rejection_conditional_matches_bayes(self):
        # continuous covariate: compare against x|y from a large true-population draw
        pop = gauss_pop()
        ds = sample_label_biased(pop, {"counts": [5000, 5000]}, None, 6)
        ref = sample_true_population(pop, 200_000, 7)
        for k in range(2):
            assert stats.ks_2samp(ds.X[ds.y == k, 0], ref.X[ref.y == k, 0]).pvalue > 1e-3

    def test_beta_reweighting_recovers_moments(self):
        pop = gauss_pop()
        p_Y = pop.true_prevalence()
        n = 40_000
        ds = sample_label_biased(pop, {"probs": [0.5, 0.5]}, n, 8)
        beta = (p_Y / 0.5)[ds.y]
        # compare three moments against a large unbiased sample
        big = sample_true_population(pop, 400_000, 9)
        pairs = [(ds.X[:, 0], big.X[:, 0]), (ds.X[:, 0] * ds.y, big.X[:, 0] * big.y),
                 (ds.X[:, 0] ** 2, big.X[:, 0] ** 2)]
        for g_b, g_t in pairs:
            terms = beta * g_b
            se = np.hypot(terms.std(ddof=1) / np.sqrt(n), g_t.std() / np.sqrt(g_t.size))
            assert abs(terms.mean() - g_t.mean()) < 3 * se

    def test_budget_error_has_diagnostics(self):
        pop = PopulationSpec(GaussianMixtureCovariates((1.0,), ((0.0,),), (1.0,)), ModelSpec("logistic-binary", 1),
                             np.array([1.0, -8.0]))
        with pytest.raises(RuntimeError, match="label 1 exceeded its budget"):
            sample_label_biased(pop, {"counts": [10, 10]}, None, 1, max_proposals=2000)


class TestSelection:
    def test_probability_examples(self):
        assert_allclose(selection_probability([0.3, 0.7], [0.3, 0.7]), [1.0, 1.0])
        acc = selection_probability([0.5, 0.5], [0.9, 0.1])
        assert_allclose(acc, [1 / 9, 1.0])
        assert_allclose(0.1 / 0.5, 0.2)   # alpha = min_y marginal/p~
        # selected label law reproduces p~ exactly
        m = np.array([0.9, 0.1])
        assert_allclose(acc * m / (acc * m).sum(), [0.5, 0.5], atol=1e-15)

    def test_label_frequencies_and_acceptance(self):
        pop = gauss_pop()
        n = 20_000
        ds = sample_via_selection(pop, [0.5, 0.5], n, 11)
        assert abs(ds.y.mean() - 0.5) < 3 * _se(0.5, n)
        rate = ds.meta["expected_acceptance_rate"]
        m = ds.meta["proposals"]
        # n successes in m proposals: compare n/m against the rate
        assert abs(n / m - rate) < 3 * np.sqrt(rate * (1 - rate) / m)

    def test_unbiased_selection_equals_true_population(self):
        pop = gauss_pop()
        a = sample_via_selection(pop, pop.true_prevalence(), 100_000, 12)
        assert_allclose(a.meta["acceptance"], 1.0)
        b = sample_true_population(pop, 100_000, 13)
        assert stats.ks_2samp(a.X[:, 0], b.X[:, 0]).pvalue > 1e-3
        table = [np.bincount(a.y, minlength=2), np.bincount(b.y, minlength=2)]
        assert stats.chi2_contingency(table).pvalue > 1e-3

    def test_selection_matches_label_biased(self):
        pop = gauss_pop()
        a = sample_via_selection(pop, [0.5, 0.5], 20_000, 14)
        b = sample_label_biased(pop, {"probs": [0.5, 0.5]}, 20_000, 15)
        for k in range(2):
            assert stats.ks_2samp(a.X[a.y == k, 0], b.X[b.y == k, 0]).pvalue > 1e-3


class TestContingency:
    def test_cells(self):
        ds = contingency_dataset()
        assert ds.X.shape == (100, 1)
        assert_array_equal(np.bincount(ds.y), [50, 50])
        x = ds.X[:, 0]
        assert (ds.y[x == 0] == 1).sum() == 44 and (x == 0).sum() == 91
        assert (ds.y[x == 1] == 1).sum() == 6 and (x == 1).sum() == 9
        assert round(44 / 91, 2) == 0.48
        assert 6 / 9 == pytest.approx(0.667, abs=1e-3)


def test_covariates_from_dict_roundtrip():
    for cov in (FiniteCovariates(np.array([[0.0], [1.0]]), np.array([0.5, 0.5])),
                GaussianMixtureCovariates((0.3, 0.7), ((0.0, 1.0), (2.0, -1.0)), (1.0, 0.2, 0.2, 1.0) * 2),
                LungLikeCovariates()):
        again = covariates_from_dict(cov.to_dict())
        assert again.to_dict() == cov.to_dict()


def test_gaussian_quadrature_moments():
    cov = GaussianMixtureCovariates((0.3, 0.7), ((0.0, 1.0), (2.0, -1.0)), (1.0, 0.2, 0.2, 1.0) * 2)
    q = cov.quadrature()
    mean = q.probs @ q.support
    assert_allclose(mean, [1.4, -0.4], atol=1e-12)
    second = q.probs @ (q.support[:, 0] * q.support[:, 1])
    assert second == pytest.approx(0.3 * 0.2 + 0.7 * (0.2 - 2.0), abs=1e-12)


def test_standardize():
    X = np.array([[1.0, 5.0], [3.0, 5.0]])
    Z, m, s = standardize(X)
    assert_allclose(Z, [[-1.0, 0.0], [1.0, 0.0]])
    assert_allclose(standardize(X, m, s)[0], Z)
