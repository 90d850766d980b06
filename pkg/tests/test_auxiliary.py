import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from prevcorr.auxiliary import (AuxParams, AuxSpec, aux_forward, aux_init, aux_kl_grad, aux_kl_loss, aux_step,
                                soft_threshold)
from prevcorr.losses import ig_loss
from prevcorr.marginal import WeightPolicy, beta_weights, marginal_estimate
from prevcorr.models import ModelSpec, log_lik_batch, vjp_log_lik


def const_spec(lr=0.05, K=2):
    return AuxSpec("constant", 3, K, lr_bias=lr, lr_offset=lr, lr_matrix=lr)


def affine_spec(P=3, K=2, lam=1e-3):
    return AuxSpec("affine", P, K, lr_bias=0.1, lr_offset=0.01, lr_matrix=0.01, sparsity_strength=lam)


class TestForward:
    def test_zero_logits(self):
        assert_allclose(aux_forward(const_spec(), AuxParams(np.zeros(2)), np.zeros(3)), np.log([0.5, 0.5]))

    def test_affine_degenerate_cases(self, rng):
        spec = affine_spec()
        b = np.array([0.3, -0.1])
        ref = b - np.log(np.exp(b).sum())
        psi = AuxParams(b, np.zeros((3, 2)), rng.standard_normal(3))
        assert_allclose(aux_forward(spec, psi, rng.standard_normal(3)), ref, atol=1e-15)
        w = rng.standard_normal(3)
        psi = AuxParams(b, rng.standard_normal((3, 2)), w.copy())
        assert_allclose(aux_forward(spec, psi, w), ref, atol=1e-15)

    def test_dimension_mismatch(self):
        psi = AuxParams(np.zeros(2), np.zeros((2, 2)), np.zeros(2))
        with pytest.raises(ValueError):
            aux_forward(affine_spec(), psi, np.zeros(3))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=3, max_size=3), st.lists(st.floats(-5, 5), min_size=6, max_size=6))
    def test_valid_distribution(self, b, a):
        spec = affine_spec(P=2, K=3)
        psi = AuxParams(np.array(b), np.array(a).reshape(2, 3), np.zeros(2))
        lq = aux_forward(spec, psi, np.array([1.0, -2.0]))
        assert abs(np.exp(lq).sum() - 1) < 1e-12

    def test_init(self):
        spec = affine_spec()
        psi = aux_init(spec, np.array([1.0, 2.0, 3.0]), [0.9, 0.1])
        assert_allclose(np.exp(aux_forward(spec, psi, np.array([5.0, 0.0, 1.0]))), [0.9, 0.1])
        assert_array_equal(psi.o, [1.0, 2.0, 3.0])


class TestKL:
    def test_examples(self):
        assert_allclose(aux_kl_loss([0.74, 0.26], np.log([0.5, 0.5])), np.log(2))
        p = np.array([0.3, 0.7])
        assert_allclose(aux_kl_loss(p, np.log(p)), -(p * np.log(p)).sum())

    def test_grad_fd(self, rng):
        spec = affine_spec(P=3, K=3)
        psi = AuxParams(rng.standard_normal(3), rng.standard_normal((3, 3)), rng.standard_normal(3))
        w = rng.standard_normal(3)
        phat = np.array([0.5, 0.3, 0.25])   # a minibatch estimate need not sum to one
        g = aux_kl_grad(spec, psi, w, phat)
        h = 1e-6

        def loss(p):
            return aux_kl_loss(phat, aux_forward(spec, p, w))

        for name in ("b", "A", "o"):
            arr = getattr(psi, name)
            fd = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                up, dn = psi.copy(), psi.copy()
                getattr(up, name)[idx] += h
                getattr(dn, name)[idx] -= h
                fd[idx] = (loss(up) - loss(dn)) / (2 * h)
            assert_allclose(getattr(g, name), fd, rtol=1e-5, atol=1e-9)

    def test_converges_to_target(self):
        spec = const_spec(lr=0.05)
        psi = AuxParams(np.zeros(2))
        state = None
        target = np.array([0.9, 0.1])
        for _ in range(2000):
            psi, state = aux_step(spec, psi, aux_kl_grad(spec, psi, None, target), state)
        assert_allclose(np.exp(aux_forward(spec, psi, None)), target, atol=1e-4)


class TestStep:
    def test_zero_gradient_fixed_point(self, rng):
        spec = affine_spec(lam=0.0)
        psi = AuxParams(rng.standard_normal(2), rng.standard_normal((3, 2)), rng.standard_normal(3))
        zero = AuxParams(np.zeros(2), np.zeros((3, 2)), np.zeros(3))
        new, _ = aux_step(spec, psi, zero)
        assert_array_equal(new.b, psi.b)
        assert_array_equal(new.A, psi.A)
        assert_array_equal(new.o, psi.o)

    def test_constant_is_adam_on_logits(self):
        spec = const_spec(lr=0.1)
        new, st1 = aux_step(spec, AuxParams(np.array([1.0, -2.0])), AuxParams(np.array([0.5, -3.0])))
        # first Adam step moves each coordinate by lr * g / (|g| + eps)
        assert_allclose(new.b, [1.0 - 0.1 * 0.5 / (0.5 + 1e-8), -2.0 + 0.1 * 3.0 / (3.0 + 1e-8)], rtol=1e-15)
        new, _ = aux_step(spec, new, AuxParams(np.array([-0.2, 1.0])), st1)
        assert_allclose(new.b, [0.86543941811651059, -1.8599781433169096], rtol=1e-14)

    def test_soft_threshold_clamps_to_zero(self):
        spec = AuxSpec("affine", 2, 2, lr_bias=0.1, lr_offset=0.1, lr_matrix=0.1, sparsity_strength=10.0)
        psi = AuxParams(np.zeros(2), np.array([[0.05, -0.3], [0.9, 0.0]]), np.zeros(2))
        zero = AuxParams(np.zeros(2), np.zeros((2, 2)), np.zeros(2))
        new, _ = aux_step(spec, psi, zero)
        assert_array_equal(new.A, [[0.0, 0.0], [0.0, 0.0]])
        assert_allclose(soft_threshold(np.array([0.5, -0.5, 0.1]), 0.2), [0.3, -0.3, 0.0])

    def test_learning_rate_defaults(self):
        s = AuxSpec.default("affine", 4, 2, main_lr=0.01)
        assert s.lr_bias == pytest.approx(0.1)
        assert s.lr_bias >= 10 * s.lr_matrix
        assert s.lr_offset == pytest.approx(0.01)


def test_main_gradient_depends_on_aux_only_through_scale(rng):
    spec = ModelSpec("logistic-binary", 2)
    w = rng.standard_normal(3)
    X = rng.standard_normal((8, 2))
    y = np.array([0, 1] * 4)
    f = log_lik_batch(spec, w, X)
    est = marginal_estimate(f, y, beta_weights(WeightPolicy("empirical"), [0.9, 0.1], y))
    omega = np.ones(8)
    aspec = const_spec()
    eta = np.array([0.4, -1.3])
    lq1 = aux_forward(aspec, AuxParams(eta), w)
    lq2 = aux_forward(aspec, AuxParams(eta / 2.0), w)   # doubled temperature
    _, G1 = ig_loss(f, y, est, lq1, omega, 100)
    _, G2 = ig_loss(f, y, est, lq2, omega, 100)
    _, Gd = ig_loss(f, y, est, lq1, omega, 100, extra_marginal_grad=None)
    # data part is identical; marginal part scales label-wise with exp(lq1 - lq2)
    data = np.zeros_like(f)
    data[np.arange(8), y] = -100 / 8
    r = np.exp(lq1 - lq2)
    assert_allclose(G2 - data, (G1 - data) * r[None, :], rtol=1e-12)
    assert_allclose(G1, Gd)
    g1 = vjp_log_lik(spec, w, X, G1)
    assert np.all(np.isfinite(g1))
