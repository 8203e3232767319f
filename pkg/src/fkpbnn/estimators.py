"""scikit-learn compatible estimators wrapping the particle trainers."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import nn, optim
from .algorithms import TrainConfig
from .experiments import evaluation_ensemble, predictive, train
from .kernels import HMC, parse_kernel
from .metrics import PredictiveEnsemble, class_probabilities, nlpd
from .models import PBNNModel


class _PBNNBase(BaseEstimator):
    """Shared fitting logic; subclasses fix the output layer and likelihood."""

    _output_activation = "NONE"
    _likelihood = "GAUSSIAN_UNIT_VAR"

    def __init__(self, hidden_layer_sizes=(20, 10), stochastic_layer=1, activation="GELU",
                 algorithm="ohsmc", n_particles=1000, batch_size=20, epochs=200, learning_rate=0.01,
                 optimizer="adam", kernel="random_walk variance=0.01", resample_policy="always",
                 resample_scheme="stratified", n_hmc_samples=1000, n_hmc_burn=2000,
                 eval_particles=1000, n_workers=1, random_state=None):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.stochastic_layer = stochastic_layer
        self.activation = activation
        self.algorithm = algorithm
        self.n_particles = n_particles
        self.batch_size = batch_size
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.kernel = kernel
        self.resample_policy = resample_policy
        self.resample_scheme = resample_scheme
        self.n_hmc_samples = n_hmc_samples
        self.n_hmc_burn = n_hmc_burn
        self.eval_particles = eval_particles
        self.n_workers = n_workers
        self.random_state = random_state

    def _targets(self, y):
        raise NotImplementedError

    def _fit(self, X, y, eval_set=None):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=False)
        Y = self._targets(y)
        self.n_features_in_ = X.shape[1]
        sizes = [X.shape[1], *self.hidden_layer_sizes, Y.shape[1]]
        self.network_ = nn.NetworkSpec.mlp(sizes, self.activation, self._output_activation_for(Y),
                                           self.stochastic_layer)
        lik = self._likelihood_for(Y)
        rs = self.random_state
        seed = int(rs) if isinstance(rs, (int, np.integer)) else int(check_random_state(rs).randint(2 ** 31 - 1))
        model = PBNNModel(self.network_, lik, X, Y, n_workers=self.n_workers)
        config = TrainConfig(n_particles=self.n_particles, batch_size=min(self.batch_size, X.shape[0]),
                             epochs=self.epochs, kernel=parse_kernel(self.kernel),
                             resample_policy=self.resample_policy, resample_scheme=self.resample_scheme,
                             optimizer=self.optimizer, schedule=optim.Constant(self.learning_rate))
        validate = None
        if eval_set is not None:
            Xv, yv = eval_set
            Xv = check_array(Xv)
            Yv = self._targets(np.asarray(yv), fitting=False)

            def validate(psi, ens):
                return nlpd(predictive(model, psi, ens, Xv), Yv, lik)

        fit = train(model, self.algorithm, nn.init_params(self.network_, seed).psi, config, seed,
                    model.prior.mean.copy(), HMC(), self.n_hmc_samples, self.n_hmc_burn, validate)
        self.likelihood_ = lik
        self.psi_ = fit.psi
        self.ensemble_ = evaluation_ensemble(fit.ensemble, self.eval_particles, seed)
        self.history_ = fit.result.records
        self.model_ = model
        return self

    def _output_activation_for(self, Y):
        return self._output_activation

    def _likelihood_for(self, Y):
        return self._likelihood

    def predictive_ensemble(self, X) -> PredictiveEnsemble:
        """Per-particle outputs on ``X`` with the posterior weights."""
        check_is_fitted(self, "psi_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return predictive(self.model_, self.psi_, self.ensemble_, X)


class PBNNRegressor(RegressorMixin, _PBNNBase):
    """Regression with a unit-variance Gaussian likelihood.

    ``predict`` returns the posterior predictive mean.
    """

    def _targets(self, y, fitting=True):
        y = np.asarray(y, dtype=float)
        if fitting:
            self._y_ndim = y.ndim
        return y.reshape(y.shape[0], -1)

    def fit(self, X, y, eval_set=None):
        return self._fit(X, y, eval_set)

    def predict(self, X):
        m = self.predictive_ensemble(X).mean()
        return m[:, 0] if self._y_ndim == 1 else m


class PBNNClassifier(ClassifierMixin, _PBNNBase):
    """Binary (sigmoid output) or multi-class (softmax output) classification."""

    def _targets(self, y, fitting=True):
        y = np.asarray(y)
        if fitting:
            check_classification_targets(y)
            self.classes_ = np.unique(y)
            if self.classes_.shape[0] < 2:
                raise ValueError("need at least two classes")
        idx = np.searchsorted(self.classes_, y)
        if np.any(idx >= self.classes_.shape[0]) or np.any(self.classes_[np.minimum(idx, len(self.classes_) - 1)] != y):
            raise ValueError("y contains labels not seen during fit")
        if self.classes_.shape[0] == 2:
            return idx.astype(float)[:, None]
        return np.eye(self.classes_.shape[0])[idx]

    def _output_activation_for(self, Y):
        return "SIGMOID" if Y.shape[1] == 1 else "SOFTMAX"

    def _likelihood_for(self, Y):
        return "BERNOULLI_FROM_PROB" if Y.shape[1] == 1 else "CATEGORICAL_FROM_PROBS"

    def fit(self, X, y, eval_set=None):
        return self._fit(X, y, eval_set)

    def predict_proba(self, X):
        return class_probabilities(self.predictive_ensemble(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
