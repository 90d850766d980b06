import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from prevcorr.marginal import (FinitePopulation, WeightPolicy, beta_weights, exact_marginal,
                               exact_marginal_jacobian, log_marginal_backward, log_marginal_grad_scale,
                               marginal_estimate, population_from_labelled)
from prevcorr.models import ModelSpec, eta_to_params, log_lik, log_lik_batch

from oracles import enumerate_fixed_counts, enumerate_iid_labels, small_population


class TestBetaWeights:
    def test_empirical_examples(self):
        w = beta_weights(WeightPolicy("empirical"), [0.99, 0.01], [0, 0, 0, 0, 1, 1, 1, 1])
        assert_allclose(w, [1.98] * 4 + [0.02] * 4)
        assert_allclose(beta_weights(WeightPolicy("empirical"), [0.9, 0.1], [0, 1]), [1.8, 0.2])

    def test_expected_identity(self):
        w = beta_weights(WeightPolicy("expected", (0.5, 0.5)), [0.5, 0.5], [0, 1, 1, 0, 1])
        assert_allclose(w, 1.0)

    def test_missing_class_error_names_label(self):
        with pytest.raises(ValueError, match="label 1"):
            beta_weights(WeightPolicy("empirical"), [0.5, 0.5], [0, 0, 0])

    def test_missing_class_fallback(self):
        w = beta_weights(WeightPolicy("empirical", (0.5, 0.5), fallback="expected"), [0.9, 0.1], [0, 0])
        assert_allclose(w, [1.8, 1.8])

    def test_zero_design_entry(self):
        with pytest.raises(ValueError):
            beta_weights(WeightPolicy("expected", (1.0, 0.0)), [0.5, 0.5], [0, 0])

    def test_policies_agree_at_expected_counts(self):
        labels = [0, 0, 0, 1, 2, 2]
        pt = (0.5, 1 / 6, 1 / 3)
        a = beta_weights(WeightPolicy("expected", pt), [0.2, 0.3, 0.5], labels)
        b = beta_weights(WeightPolicy("empirical"), [0.2, 0.3, 0.5], labels)
        assert_allclose(a, b, rtol=1e-14)


class TestMarginalEstimate:
    def _ll(self, p1):
        p1 = np.asarray(p1)
        return np.log(np.stack([1 - p1, p1], axis=1))

    def test_examples(self):
        ll = self._ll([0.2, 0.8])
        assert_allclose(np.exp(marginal_estimate(ll, [0, 1], [1.0, 1.0]).log_phat), [0.5, 0.5], rtol=1e-14)
        est = marginal_estimate(ll, [0, 1], [1.8, 0.2])
        assert_allclose(np.exp(est.log_phat), [0.74, 0.26], rtol=1e-14)
        assert_allclose(est.gamma, np.log([0.9, 0.1]))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            marginal_estimate(np.array([[np.nan, 0.0]]), [0], [1.0])

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0.01, 0.99), min_size=2, max_size=8), st.randoms(use_true_random=False))
    def test_permutation_invariance(self, probs, rnd):
        ll = self._ll(probs)
        labels = np.arange(len(probs)) % 2
        w = beta_weights(WeightPolicy("empirical"), [0.7, 0.3], labels)
        perm = list(range(len(probs)))
        rnd.shuffle(perm)
        a = marginal_estimate(ll, labels, w).log_phat
        b = marginal_estimate(ll[perm], labels[perm], w[perm]).log_phat
        assert_allclose(a, b, rtol=1e-13)

    def test_grad_scale(self):
        est = marginal_estimate(self._ll([0.2, 0.8]), [0, 1], [1.8, 0.2])
        assert_allclose(log_marginal_grad_scale(est, est.log_phat), 1.0)
        assert_allclose(log_marginal_grad_scale(est, np.log([0.75, 0.25]))[1], 1.04, rtol=1e-13)


class TestExactMarginal:
    def test_single_point(self):
        spec = ModelSpec("logistic-binary", 2)
        w = np.array([0.3, -0.4, 0.1])
        pop = FinitePopulation(np.array([[1.0, 2.0]]), np.array([1.0]))
        assert_allclose(exact_marginal(spec, w, pop), np.exp(log_lik(spec, w, [1.0, 2.0])))

    def test_two_point_mixture(self):
        spec = ModelSpec("logistic-binary", 1)
        e0, e1, q = -0.3, 1.1, 0.2
        pop = FinitePopulation(np.array([[0.0], [1.0]]), np.array([1 - q, q]))
        sig = lambda z: 1 / (1 + np.exp(-z))
        assert_allclose(exact_marginal(spec, eta_to_params(e0, e1), pop)[1], (1 - q) * sig(e0) + q * sig(e1))

    def test_unnormalized_rejected(self):
        with pytest.raises(ValueError):
            FinitePopulation(np.zeros((2, 1)), np.array([0.5, 0.6]))

    def test_jacobian_fd(self, rng):
        spec = ModelSpec("logistic-binary", 2)
        pop = FinitePopulation(rng.standard_normal((5, 2)), np.full(5, 0.2))
        w = rng.standard_normal(3)
        J = exact_marginal_jacobian(spec, w, pop)
        h = 1e-6
        fd = np.stack([(exact_marginal(spec, w + h * e, pop) - exact_marginal(spec, w - h * e, pop)) / (2 * h)
                       for e in np.eye(3)], axis=1)
        assert_allclose(J, fd, atol=1e-9)

    def test_population_from_labelled(self):
        X = np.array([[0.0]] * 4 + [[1.0]] * 2)
        y = np.array([0, 0, 1, 1, 0, 1])
        pop = population_from_labelled(X, y, [0.9, 0.1])
        # x=1 mass: 0.9 * 1/3 + 0.1 * 1/3
        assert_allclose(pop.probs, [2 / 3, 1 / 3])


class TestUnbiasedness:
    spec = ModelSpec("logistic-binary", 1)
    support = np.array([[-1.0], [0.5], [2.0], [3.0]])
    probs = np.array([0.4, 0.3, 0.2, 0.1])
    w_star = np.array([0.8, -1.0])
    w = np.array([-0.5, 0.7])

    def _truth(self):
        pop = FinitePopulation(self.support, self.probs)
        return exact_marginal(self.spec, self.w, pop), exact_marginal_jacobian(self.spec, self.w, pop)

    @pytest.mark.parametrize("kind", ["expected", "empirical"])
    def test_fixed_counts_exhaustive(self, kind):
        _, p_Y, cond = small_population(self.spec, self.w_star, self.support, self.probs)
        pol = WeightPolicy(kind, (2 / 3, 1 / 3))
        m, g = enumerate_fixed_counts(self.spec, self.w, self.support, cond, (2, 1), p_Y, pol)
        exact, J = self._truth()
        assert_allclose(m, exact, atol=1e-12)
        assert_allclose(g, J, atol=1e-10)

    @pytest.mark.parametrize("kind", ["expected", "empirical"])
    def test_iid_labels_exhaustive(self, kind):
        _, p_Y, cond = small_population(self.spec, self.w_star, self.support, self.probs)
        pt = np.array([0.6, 0.4])
        m, g, _ = enumerate_iid_labels(self.spec, self.w, self.support, cond, pt, 3, p_Y,
                                       WeightPolicy(kind, tuple(pt)))
        exact, J = self._truth()
        assert_allclose(m, exact, atol=1e-12)
        assert_allclose(g, J, atol=1e-10)


def test_log_marginal_backward_full_batch_equals_unit_scale(rng):
    spec = ModelSpec("logistic-binary", 2)
    X = rng.standard_normal((6, 2))
    y = np.array([0, 1, 0, 1, 1, 0])
    f = log_lik_batch(spec, rng.standard_normal(3), X)
    est = marginal_estimate(f, y, beta_weights(WeightPolicy("empirical"), [0.8, 0.2], y))
    g = np.array([3.0, -2.0])
    a = log_marginal_backward(f, est, None, g, full_batch=True)
    b = log_marginal_backward(f, est, est.log_phat, g)
    assert_allclose(a, b, rtol=1e-14)
    c = log_marginal_backward(f, est, est.log_phat - np.log(2.0), g)
    assert_allclose(c, 2 * b, rtol=1e-14)


def test_mc_unbiased_size2_minibatches():
    # label-biased design, size-2 minibatches with one sample of each class
    spec = ModelSpec("logistic-binary", 1)
    support = np.array([[0.0], [1.0], [2.0]])
    probs = np.array([0.5, 0.3, 0.2])
    _, p_Y, cond = small_population(spec, np.array([1.0, -1.5]), support, probs)
    w = np.array([0.4, -0.2])
    exact = exact_marginal(spec, w, FinitePopulation(support, probs))
    rng = np.random.default_rng(5)
    n = 100_000
    P = np.exp(log_lik_batch(spec, w, support))
    x0 = rng.choice(3, n, p=cond[0])
    x1 = rng.choice(3, n, p=cond[1])
    beta = beta_weights(WeightPolicy("empirical"), p_Y, [0, 1])
    draws = 0.5 * (beta[0] * P[x0] + beta[1] * P[x1])
    se = draws.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(draws.mean(axis=0) - exact) < 3 * se)
