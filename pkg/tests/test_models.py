import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fkpbnn import nn
from fkpbnn.exceptions import NonFiniteError, SingularParameterError
from fkpbnn.models import (
    CrescentModel, GaussianPrior, LinearGaussianModel, PBNNModel, crescent_loglik, log_prior, sample_prior,
)
from oracles import conjugate_log_evidence, conjugate_posterior, relative_error

LOG_2PI = math.log(2 * math.pi)


class TestPrior:
    def test_standard_normal_at_mode(self):
        assert log_prior(GaussianPrior.standard(1), [0.0]) == pytest.approx(-0.5 * LOG_2PI, abs=1e-15)

    def test_crescent_prior_at_origin(self):
        prior = GaussianPrior([0.0, 0.0], [2.0, 1.0])
        assert log_prior(prior, [0.0, 0.0]) == pytest.approx(-LOG_2PI - 0.5 * math.log(2.0), abs=1e-14)

    @given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.lists(st.floats(-5, 5), min_size=3, max_size=3))
    def test_translation_invariance(self, phi, shift):
        phi, shift = np.array(phi), np.array(shift)
        a = log_prior(GaussianPrior(np.zeros(3), [1.0, 2.0, 0.5]), phi)
        b = log_prior(GaussianPrior(shift, [1.0, 2.0, 0.5]), phi + shift)
        assert a == pytest.approx(b, rel=1e-12, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            log_prior(GaussianPrior.standard(2), [0.0, 0.0, 0.0])

    def test_non_positive_variance_rejected(self):
        with pytest.raises(ValueError):
            GaussianPrior([0.0], [0.0])

    def test_sample_mean(self):
        draws = sample_prior(GaussianPrior.standard(3), 100_000, seed=0)
        assert np.all(np.abs(draws.mean(axis=0)) < 0.02)

    def test_sample_determinism_and_shape(self):
        prior = GaussianPrior.standard(4)
        assert np.array_equal(sample_prior(prior, 5, 7), sample_prior(prior, 5, 7))
        assert sample_prior(prior, 1, 0).shape == (1, 4)

    def test_gradient_matches_finite_differences(self):
        prior = GaussianPrior([1.0, -2.0], [0.5, 3.0])
        phi = np.array([0.3, 0.4])
        h = 1e-6
        fd = [(prior.logpdf(phi + h * e) - prior.logpdf(phi - h * e)) / (2 * h) for e in np.eye(2)]
        assert np.allclose(prior.grad(phi), fd, rtol=1e-8)


class TestCrescent:
    def test_zero_residual(self):
        assert crescent_loglik(1.0, [0.0, 0.0], 0.5) == pytest.approx(-0.5 * LOG_2PI, abs=1e-15)

    def test_unit_residual(self):
        assert crescent_loglik(1.0, [0.0, 0.0], 1.5) == pytest.approx(-0.5 * LOG_2PI - 0.5, abs=1e-15)

    def test_psi_zero_is_singular(self):
        with pytest.raises(SingularParameterError):
            crescent_loglik(0.0, [0.0, 0.0], 1.0)
        with pytest.raises(SingularParameterError):
            CrescentModel([1.0]).log_potential([0.0], np.zeros((1, 2)), [0])

    @pytest.mark.parametrize("y", [2.0, 3.0, -0.5])
    def test_psi_gradient_matches_finite_differences(self, y):
        # at y = 2 the residual vanishes, so both sides are zero and are compared absolutely
        m = CrescentModel([y])
        h = 1e-6
        fd = (crescent_loglik(1 + h, [1.0, 1.0], y) - crescent_loglik(1 - h, [1.0, 1.0], y)) / (2 * h)
        g = m.grad_psi([1.0], np.array([[1.0, 1.0]]), [0])[0, 0]
        assert relative_error(g, fd, floor=1e-3) <= 1e-6

    @given(st.floats(0.3, 3.0), st.floats(-2, 2), st.floats(-2, 2))
    def test_phi_gradient_matches_finite_differences(self, psi, a, b):
        y = np.array([0.4, 1.3, -0.2])
        m = CrescentModel(y)
        phi = np.array([[a, b]])
        h = 1e-6
        fd = [(m.log_potential([psi], phi + h * e, [0, 1, 2]) - m.log_potential([psi], phi - h * e, [0, 1, 2]))[0]
              / (2 * h) for e in np.eye(2)]
        assert np.all(relative_error(m.grad_phi([psi], phi, [0, 1, 2])[0], fd) <= 1e-6)

    def test_potential_matches_pointwise_loglik(self):
        y = np.array([0.1, 2.0, -1.0, 0.7])
        m = CrescentModel(y)
        phi = np.array([[0.5, -0.3], [1.2, 0.8]])
        lp = m.log_potential([1.3], phi, np.arange(4))
        ref = [sum(crescent_loglik(1.3, p, yi) for yi in y) for p in phi]
        assert np.allclose(lp, ref, rtol=1e-13)


class TestPotentialInvariants:
    @given(st.lists(st.integers(0, 9), max_size=10), st.lists(st.integers(0, 9), max_size=10))
    def test_additivity_over_concatenation(self, a, b):
        rng = np.random.default_rng(0)
        m = LinearGaussianModel(rng.standard_normal(10))
        phi = rng.standard_normal((3, 1))
        lhs = m.log_potential([0.2], phi, a + b)
        rhs = m.log_potential([0.2], phi, a) + m.log_potential([0.2], phi, b)
        assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)

    def test_empty_batch_is_zero(self):
        m = CrescentModel([1.0, 2.0])
        assert np.array_equal(m.log_potential([1.0], np.ones((4, 2)), []), np.zeros(4))


class TestLinearGaussian:
    def test_log_evidence_matches_dense_covariance(self):
        rng = np.random.default_rng(3)
        y = rng.standard_normal(15) + 0.7
        m = LinearGaussianModel(y, prior_mean=0.2, prior_var=1.7)
        for psi in (-1.0, 0.0, 0.9):
            assert m.log_evidence([psi], np.arange(15)) == pytest.approx(
                conjugate_log_evidence(y, psi, 0.2, 1.7), abs=1e-10)

    def test_posterior_matches_oracle(self):
        y = np.array([0.3, 1.1, -0.4])
        m = LinearGaussianModel(y)
        mean, var = m.posterior([0.5], [0, 1, 2])
        ref_mean, ref_var = conjugate_posterior(y, 0.5)
        assert mean == pytest.approx(ref_mean, abs=1e-14) and var == pytest.approx(ref_var, abs=1e-14)

    def test_evidence_gradient_matches_finite_differences(self):
        y = np.random.default_rng(1).standard_normal(20)
        m = LinearGaussianModel(y)
        h = 1e-6
        idx = np.arange(20)
        fd = (conjugate_log_evidence(y, 0.3 + h) - conjugate_log_evidence(y, 0.3 - h)) / (2 * h)
        assert m.grad_log_evidence([0.3], idx) == pytest.approx(fd, rel=1e-6)


def small_pbnn(n_workers=1, lik="GAUSSIAN_UNIT_VAR", n=25):
    rng = np.random.default_rng(0)
    if lik == "GAUSSIAN_UNIT_VAR":
        spec = nn.NetworkSpec.mlp([2, 6, 4, 1], stochastic_layer=1)
        y = rng.standard_normal((n, 1))
    else:
        spec = nn.NetworkSpec.mlp([2, 6, 4, 1], "GELU", "SIGMOID", stochastic_layer=1)
        y = rng.integers(0, 2, (n, 1)).astype(float)
    x = rng.standard_normal((n, 2))
    return PBNNModel(spec, lik, x, y, n_workers=n_workers), spec, x, y


class TestPBNNModel:
    def test_log_potential_matches_network(self):
        m, spec, x, y = small_pbnn()
        p = nn.init_params(spec, 1)
        phi = np.random.default_rng(2).standard_normal((600, spec.dim_phi))
        idx = np.array([3, 7, 7, 11])
        ref = nn.log_likelihood(spec, p.psi, phi, x[idx], y[idx], "GAUSSIAN_UNIT_VAR")
        assert np.allclose(m.log_potential(p.psi, phi, idx), ref, rtol=1e-13)

    @pytest.mark.parametrize("lik", ["GAUSSIAN_UNIT_VAR", "BERNOULLI_FROM_PROB"])
    def test_expected_gradient_is_weighted_per_particle_gradient(self, lik):
        m, spec, x, y = small_pbnn(lik=lik)
        p = nn.init_params(spec, 1)
        rng = np.random.default_rng(5)
        phi = rng.standard_normal((300, spec.dim_phi))
        w = rng.dirichlet(np.ones(300))
        idx = np.arange(10, 20)
        ref = w @ m.grad_psi(p.psi, phi, idx)
        assert np.allclose(m.expected_grad_psi(p.psi, phi, w, idx), ref, rtol=1e-10, atol=1e-12)

    def test_worker_count_does_not_change_results(self):
        m1, spec, _, _ = small_pbnn(1)
        m4, _, _, _ = small_pbnn(4)
        p = nn.init_params(spec, 1)
        rng = np.random.default_rng(9)
        phi = rng.standard_normal((1000, spec.dim_phi))
        w = rng.dirichlet(np.ones(1000))
        idx = np.arange(25)
        assert np.array_equal(m1.log_potential(p.psi, phi, idx), m4.log_potential(p.psi, phi, idx))
        assert np.array_equal(m1.expected_grad_psi(p.psi, phi, w, idx), m4.expected_grad_psi(p.psi, phi, w, idx))
        assert np.array_equal(m1.grad_phi(p.psi, phi, idx), m4.grad_phi(p.psi, phi, idx))

    def test_non_finite_gradient_names_particle(self):
        m, spec, _, _ = small_pbnn()
        p = nn.init_params(spec, 1)
        phi = np.zeros((600, spec.dim_phi))
        phi[517, 0] = np.inf
        with pytest.raises(NonFiniteError) as err:
            m.expected_grad_psi(p.psi, phi, np.full(600, 1 / 600), np.arange(5))
        assert err.value.particle == 517

    def test_prior_dimension_must_match(self):
        spec = nn.NetworkSpec.mlp([2, 3, 1], stochastic_layer=0)
        with pytest.raises(ValueError):
            PBNNModel(spec, "GAUSSIAN_UNIT_VAR", np.zeros((2, 2)), np.zeros(2), prior=GaussianPrior.standard(3))
