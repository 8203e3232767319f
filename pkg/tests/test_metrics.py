import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fkpbnn.metrics import PredictiveEnsemble, accuracy, class_probabilities, ece, nlpd, rmse

GAUSS = "GAUSSIAN_UNIT_VAR"


class TestNLPD:
    def test_exact_predictions(self):
        y = np.array([[0.3], [-1.0], [2.5]])
        pe = PredictiveEnsemble.uniform(np.stack([y, y, y]))
        assert nlpd(pe, y, GAUSS) == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-15)

    def test_single_particle_is_average_nll(self):
        rng = np.random.default_rng(0)
        pred, y = rng.standard_normal((1, 8, 1)), rng.standard_normal((8, 1))
        ref = np.mean(0.5 * math.log(2 * math.pi) + 0.5 * (y - pred[0]) ** 2)
        assert nlpd(PredictiveEnsemble.uniform(pred), y, GAUSS) == pytest.approx(ref, rel=1e-14)

    def test_two_component_mixture(self):
        y = np.array([[1.0], [4.0]])
        pe = PredictiveEnsemble.uniform(np.stack([y, y + 2]))
        ref = -math.log(0.5 * (1 + math.exp(-2)) / math.sqrt(2 * math.pi))
        assert nlpd(pe, y, GAUSS) == pytest.approx(ref, rel=1e-14)

    def test_bernoulli(self):
        pe = PredictiveEnsemble([[[0.8], [0.3]], [[0.6], [0.1]]], [0.25, 0.75])
        p = np.array([0.25 * 0.8 + 0.75 * 0.6, 0.25 * 0.3 + 0.75 * 0.1])
        ref = -np.mean([math.log(p[0]), math.log(1 - p[1])])
        assert nlpd(pe, [1, 0], "BERNOULLI_FROM_PROB") == pytest.approx(ref, rel=1e-13)

    def test_categorical(self):
        pe = PredictiveEnsemble.uniform([[[0.2, 0.5, 0.3]]])
        assert nlpd(pe, [[0, 0, 1]], "CATEGORICAL_FROM_PROBS") == pytest.approx(-math.log(0.3), rel=1e-14)

    @given(st.integers(0, 2 ** 31 - 1), st.integers(1, 6))
    def test_invariant_to_duplication_with_weight_splitting(self, seed, J):
        rng = np.random.default_rng(seed)
        pred, y = rng.standard_normal((J, 5, 2)), rng.standard_normal((5, 2))
        w = rng.dirichlet(np.ones(J))
        k = int(rng.integers(J))
        split = rng.uniform(0.1, 0.9)
        w2 = np.concatenate([w, [w[k] * (1 - split)]])
        w2[k] *= split
        a = nlpd(PredictiveEnsemble(pred, w), y, GAUSS)
        b = nlpd(PredictiveEnsemble(np.concatenate([pred, pred[k:k + 1]]), w2), y, GAUSS)
        assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


class TestRMSE:
    def test_exact(self):
        f = np.linspace(-2, 2, 9)[:, None]
        assert rmse(PredictiveEnsemble.uniform(f[None]), f) == 0.0

    @pytest.mark.parametrize("delta", [-0.7, 0.25, 3.0])
    def test_constant_offset(self, delta):
        f = np.linspace(-2, 2, 9)[:, None]
        assert rmse(PredictiveEnsemble.uniform((f + delta)[None]), f) == pytest.approx(abs(delta), rel=1e-14)

    def test_mean_cancellation(self):
        f = np.linspace(-2, 2, 9)[:, None]
        assert rmse(PredictiveEnsemble.uniform(np.stack([f - 1, f + 1])), f) == pytest.approx(0.0, abs=1e-15)

    @given(st.integers(0, 2 ** 31 - 1))
    def test_invariant_to_point_order(self, seed):
        rng = np.random.default_rng(seed)
        pred, ref = rng.standard_normal((3, 10, 1)), rng.standard_normal((10, 1))
        w = rng.dirichlet(np.ones(3))
        perm = rng.permutation(10)
        a = rmse(PredictiveEnsemble(pred, w), ref)
        b = rmse(PredictiveEnsemble(pred[:, perm], w), ref[perm])
        assert a == pytest.approx(b, rel=1e-12)


def binary(p_class1):
    return PredictiveEnsemble.uniform(np.asarray(p_class1, dtype=float)[None, :, None])


class TestClassification:
    def test_perfect_confident_predictor(self):
        labels = np.array([0, 1, 1, 0])
        pe = binary(labels.astype(float))
        assert ece(pe, labels) == 0.0 and accuracy(pe, labels) == 1.0

    def test_uninformative_predictor_on_balanced_set(self):
        labels = np.array([0, 1] * 10)
        pe = binary(np.full(20, 0.5))
        assert np.array_equal(class_probabilities(pe).argmax(axis=1), np.zeros(20))
        assert ece(pe, labels) == pytest.approx(0.0, abs=1e-15)
        assert accuracy(pe, labels) == 0.5

    def test_overconfident_predictor(self):
        labels = np.array([0, 1] * 10)
        pe = binary(np.full(20, 0.1))
        assert ece(pe, labels) == pytest.approx(0.4, abs=1e-14)

    def test_accuracy_counts(self):
        labels = np.array([1, 1, 1, 1])
        assert accuracy(binary([0.9, 0.8, 0.7, 0.2]), labels) == 0.75
        assert accuracy(binary([0.1, 0.2, 0.3, 0.4]), labels) == 0.0

    def test_multiclass_ties_go_to_lowest_index(self):
        pe = PredictiveEnsemble.uniform([[[0.2, 0.4, 0.4], [0.5, 0.5, 0.0]]])
        assert accuracy(pe, [[0, 1, 0], [1, 0, 0]]) == 1.0

    def test_two_bin_hand_computation(self):
        # conf 0.95 (bin 10): 2 of 2 correct; conf 0.6 (bin 6): 1 of 2 correct
        pe = binary([0.95, 0.95, 0.6, 0.6])
        labels = np.array([1, 1, 1, 0])
        assert ece(pe, labels) == pytest.approx(0.5 * 0.05 + 0.5 * 0.1, abs=1e-14)

    def test_weighted_mixture_probabilities(self):
        pe = PredictiveEnsemble([[[0.9]], [[0.3]]], [0.25, 0.75])
        assert np.allclose(class_probabilities(pe), [[1 - 0.45, 0.45]], rtol=1e-15)

    @given(st.integers(0, 2 ** 31 - 1), st.integers(1, 20))
    def test_bounds(self, seed, n_bins):
        rng = np.random.default_rng(seed)
        probs = rng.dirichlet(np.ones(3), size=(4, 15))
        pe = PredictiveEnsemble(probs, rng.dirichlet(np.ones(4)))
        labels = np.eye(3)[rng.integers(0, 3, 15)]
        assert 0.0 <= ece(pe, labels, n_bins) <= 1.0
        assert 0.0 <= accuracy(pe, labels) <= 1.0

    def test_bin_count_must_be_positive(self):
        with pytest.raises(ValueError):
            ece(binary([0.5]), [0], 0)


def test_weights_must_be_normalised():
    with pytest.raises(ValueError):
        PredictiveEnsemble(np.zeros((2, 3, 1)), [0.5, 0.6])
