import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from fkpbnn import nn
from fkpbnn.exceptions import NonFiniteError
from oracles import LIKELIHOODS, finite_difference_grad_psi, min_relu_margin, random_network, relative_error


def identity_net(activation="NONE"):
    return nn.NetworkSpec((nn.Dense(1, 1, activation),), 0)


class TestNetworkSpec:
    def test_dimension_chain_is_enforced(self):
        with pytest.raises(ValueError, match="outputs 3"):
            nn.NetworkSpec((nn.Dense(2, 3), nn.Dense(4, 1)), 0)

    def test_softmax_only_on_output(self):
        with pytest.raises(ValueError, match="SOFTMAX"):
            nn.NetworkSpec((nn.Dense(2, 3, "SOFTMAX"), nn.Dense(3, 1)), 0)

    @pytest.mark.parametrize("layer", [-1, 2])
    def test_stochastic_layer_in_range(self, layer):
        with pytest.raises(ValueError):
            nn.NetworkSpec((nn.Dense(2, 3), nn.Dense(3, 1)), layer)

    def test_parameter_counts(self):
        spec = nn.NetworkSpec.mlp([1, 20, 10, 1], stochastic_layer=1)
        assert spec.dim_phi == 20 * 10 + 10
        assert spec.dim_psi == (1 * 20 + 20) + (10 * 1 + 1)

    def test_dict_round_trip(self):
        spec = nn.NetworkSpec.mlp([2, 5, 3], "RELU", "SOFTMAX", stochastic_layer=1, gelu_approximate=False)
        assert nn.NetworkSpec.from_dict(spec.to_dict()) == spec


class TestInitParams:
    def test_single_scalar_layer_has_two_parameters(self):
        p = nn.init_params(identity_net(), seed=3)
        assert p.psi.size + p.phi.size == 2

    def test_biases_are_zero(self):
        spec = nn.NetworkSpec.mlp([3, 7, 4, 2], stochastic_layer=1)
        p = nn.init_params(spec, seed=0)
        for k in range(3):
            assert np.all(p.layer(k)[1] == 0.0)

    def test_lecun_variance(self):
        spec = nn.NetworkSpec((nn.Dense(100, 1000),), 0)
        W, _ = nn.init_params(spec, seed=1).layer(0)
        assert W.size == 100_000
        assert abs(W.var() / 0.01 - 1.0) < 0.05

    def test_layout_round_trip(self):
        spec = nn.NetworkSpec.mlp([3, 4, 5, 2], stochastic_layer=2)
        p = nn.init_params(spec, seed=2)
        p.psi[:] = np.arange(p.psi.size)
        p.phi[:] = -np.arange(p.phi.size)
        q = nn.ParamSplit.from_layers(spec, p.to_layers())
        assert np.array_equal(q.psi, p.psi) and np.array_equal(q.phi, p.phi)

    def test_layout_slots_are_disjoint_and_exhaustive(self):
        spec = nn.NetworkSpec.mlp([3, 4, 5, 6, 2], stochastic_layer=1)
        used = np.zeros(spec.dim_psi, dtype=int)
        for k, (name, off, (i, o)) in spec.layout().items():
            if name == "psi":
                used[off:off + i * o + o] += 1
            else:
                assert off == 0 and i * o + o == spec.dim_phi
        assert np.all(used == 1)


class TestForward:
    def test_identity_layer(self):
        spec = identity_net()
        p = nn.ParamSplit.from_layers(spec, [(np.eye(1), np.zeros(1))])
        assert np.array_equal(nn.forward(spec, p, [[3.5]]), [[3.5]])

    def test_softmax_of_zero_logits_is_uniform(self):
        spec = nn.NetworkSpec((nn.Dense(3, 10, "SOFTMAX"),), 0)
        p = nn.ParamSplit.from_layers(spec, [(np.zeros((3, 10)), np.zeros(10))])
        out = nn.forward(spec, p, np.ones((2, 3)))
        assert np.allclose(out, 0.1, atol=1e-15)

    @pytest.mark.parametrize("approximate", [True, False])
    def test_gelu_at_zero(self, approximate):
        assert nn.activate(np.zeros(1), nn.Activation.GELU, approximate)[0] == 0.0

    def test_gelu_tanh_form(self):
        z = np.linspace(-4, 4, 17)
        ref = 0.5 * z * (1 + np.tanh(np.sqrt(2 / np.pi) * (z + 0.044715 * z ** 3)))
        assert np.allclose(nn.activate(z, nn.Activation.GELU, True), ref, rtol=1e-14, atol=1e-15)

    def test_input_dimension_mismatch(self):
        spec = nn.NetworkSpec.mlp([2, 3, 1], stochastic_layer=0)
        with pytest.raises(ValueError, match="shape"):
            nn.forward(spec, nn.init_params(spec, 0), np.ones((4, 3)))

    def test_particle_forward_matches_single_forward(self):
        spec = nn.NetworkSpec.mlp([2, 6, 4, 1], stochastic_layer=1)
        p = nn.init_params(spec, 0)
        rng = np.random.default_rng(0)
        phi = rng.standard_normal((5, spec.dim_phi))
        x = rng.standard_normal((7, 2))
        batch = nn.forward_particles(spec, p.psi, phi, x)
        for j in range(5):
            single = nn.forward(spec, nn.ParamSplit(p.psi, phi[j], p.layout), x)
            assert np.allclose(batch[j], single, rtol=1e-13, atol=1e-14)

    def test_forward_is_deterministic(self):
        spec = nn.NetworkSpec.mlp([2, 6, 4, 1], stochastic_layer=2)
        p = nn.init_params(spec, 0)
        x = np.random.default_rng(1).standard_normal((9, 2))
        assert np.array_equal(nn.forward(spec, p, x), nn.forward(spec, p, x))

    @given(st.integers(0, 2 ** 31 - 1))
    def test_softmax_rows_are_probabilities(self, seed):
        rng = np.random.default_rng(seed)
        spec = nn.NetworkSpec.mlp([3, 5, 4], "GELU", "SOFTMAX", stochastic_layer=0)
        p = nn.init_params(spec, seed)
        out = nn.forward(spec, p, 3.0 * rng.standard_normal((6, 3)))
        assert np.all(out > 0) and np.all(out < 1)
        assert np.allclose(out.sum(axis=1), 1.0, atol=1e-12, rtol=0)


class TestLikelihoodChecks:
    def test_bernoulli_needs_sigmoid(self):
        spec = nn.NetworkSpec.mlp([2, 1], stochastic_layer=0)
        p = nn.init_params(spec, 0)
        with pytest.raises(ValueError, match="SIGMOID"):
            nn.log_likelihood(spec, p.psi, p.phi, np.ones((1, 2)), [[1.0]], "BERNOULLI_FROM_PROB")

    def test_categorical_needs_softmax(self):
        spec = nn.NetworkSpec.mlp([2, 3], stochastic_layer=0)
        p = nn.init_params(spec, 0)
        with pytest.raises(ValueError, match="SOFTMAX"):
            nn.log_likelihood(spec, p.psi, p.phi, np.ones((1, 2)), [[1.0, 0, 0]], "CATEGORICAL_FROM_PROBS")

    def test_gaussian_value(self):
        spec = identity_net()
        p = nn.ParamSplit.from_layers(spec, [(np.full((1, 1), 2.0), np.zeros(1))])
        ll = nn.log_likelihood(spec, p.psi, p.phi, [[1.0]], [[3.0]], "GAUSSIAN_UNIT_VAR")
        assert ll[0] == pytest.approx(-0.5 * np.log(2 * np.pi) - 0.5)


class TestGradPsi:
    def test_zero_residual_gives_zero_gradient(self):
        spec = nn.NetworkSpec((nn.Dense(1, 1), nn.Dense(1, 1)), 1)
        p = nn.ParamSplit.from_layers(spec, [(np.full((1, 1), 2.0), np.zeros(1)), (np.ones((1, 1)), np.zeros(1))])
        g = nn.grad_psi_loglik(spec, p, [[1.5]], [[3.0]], "GAUSSIAN_UNIT_VAR")
        assert np.array_equal(g, np.zeros(2))

    def test_batch_gradient_is_sum_of_point_gradients(self):
        spec = nn.NetworkSpec.mlp([2, 5, 3, 1], stochastic_layer=1)
        p = nn.init_params(spec, 4)
        rng = np.random.default_rng(4)
        x, y = rng.standard_normal((2, 2)), rng.standard_normal((2, 1))
        lik = "GAUSSIAN_UNIT_VAR"
        g = nn.grad_psi_loglik(spec, p, x, y, lik)
        parts = nn.grad_psi_loglik(spec, p, x[:1], y[:1], lik) + nn.grad_psi_loglik(spec, p, x[1:], y[1:], lik)
        assert np.allclose(g, parts, rtol=1e-12, atol=1e-14)

    def test_empty_batch_is_rejected(self):
        spec = identity_net()
        with pytest.raises(ValueError, match="empty"):
            nn.grad_psi_loglik(spec, nn.init_params(spec, 0), np.zeros((0, 1)), np.zeros((0, 1)),
                               "GAUSSIAN_UNIT_VAR")

    def test_non_finite_parameters_report_layer(self):
        spec = nn.NetworkSpec.mlp([1, 3, 1], stochastic_layer=1)
        p = nn.init_params(spec, 0)
        p.psi[0] = np.inf
        with pytest.raises(NonFiniteError) as err:
            nn.grad_psi_loglik(spec, p, [[1.0]], [[0.0]], "GAUSSIAN_UNIT_VAR")
        assert err.value.layer == 0

    @given(seed=st.integers(0, 2 ** 31 - 1), lik=st.sampled_from(LIKELIHOODS), approximate=st.booleans())
    def test_matches_finite_differences(self, seed, lik, approximate):
        rng = np.random.default_rng(seed)
        spec, p, x, y = random_network(rng, lik, gelu_approximate=approximate)
        assume(min_relu_margin(spec, p, x) > 1e-3)
        g = nn.grad_psi_loglik(spec, p, x, y, lik)
        fd = finite_difference_grad_psi(spec, p, x, y, lik)
        assert np.all(relative_error(g, fd) <= 1e-5)

    @given(seed=st.integers(0, 2 ** 31 - 1), lik=st.sampled_from(LIKELIHOODS))
    def test_weighted_particle_gradient_is_weighted_sum(self, seed, lik):
        rng = np.random.default_rng(seed)
        spec, p, x, y = random_network(rng, lik)
        phi = p.phi + 0.3 * rng.standard_normal((4, p.phi.size))
        w = rng.dirichlet(np.ones(4))
        _, g, _ = nn.value_and_grad(spec, p.psi, phi, x, y, lik, weights=w)
        ref = sum(w[j] * nn.grad_psi_loglik(spec, nn.ParamSplit(p.psi, phi[j], p.layout), x, y, lik)
                  for j in range(4))
        assert np.allclose(g, ref, rtol=1e-10, atol=1e-12)

    @given(seed=st.integers(0, 2 ** 31 - 1), lik=st.sampled_from(LIKELIHOODS))
    def test_phi_gradient_matches_finite_differences(self, seed, lik):
        rng = np.random.default_rng(seed)
        spec, p, x, y = random_network(rng, lik)
        assume(min_relu_margin(spec, p, x) > 1e-3)
        _, _, g_phi = nn.value_and_grad(spec, p.psi, p.phi, x, y, lik, need_phi=True)
        h = 1e-5
        fd = np.empty(p.phi.size)
        for i in range(p.phi.size):
            up, down = p.phi.copy(), p.phi.copy()
            up[i] += h
            down[i] -= h
            fd[i] = (nn.log_likelihood(spec, p.psi, up, x, y, lik)[0]
                     - nn.log_likelihood(spec, p.psi, down, x, y, lik)[0]) / (2 * h)
        assert np.all(relative_error(g_phi[0], fd) <= 1e-5)
