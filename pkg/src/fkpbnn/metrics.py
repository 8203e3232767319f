"""Predictive metrics for weighted particle ensembles: NLPD, RMSE, ECE, accuracy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .nn import LikelihoodKind

_LOG_2PI = float(np.log(2.0 * np.pi))
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class PredictiveEnsemble:
    """Per-particle predictions ``(J, N, d_y)`` with normalised weights ``(J,)``.

    For classification the predictions are probabilities: one column
    (probability of class 1) for binary tasks, otherwise one per class.
    """

    predictions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.predictions, dtype=float)
        if p.ndim == 2:
            p = p[:, :, None]
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (p.shape[0],):
            raise ValueError(f"need {p.shape[0]} weights, got shape {w.shape}")
        if not np.isclose(w.sum(), 1.0, atol=1e-8):
            raise ValueError("weights must sum to one")
        object.__setattr__(self, "predictions", p)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, predictions) -> "PredictiveEnsemble":
        predictions = np.asarray(predictions, dtype=float)
        J = predictions.shape[0]
        return cls(predictions, np.full(J, 1.0 / J))

    def mean(self) -> np.ndarray:
        return np.tensordot(self.weights, self.predictions, axes=1)


def _pointwise_loglik(pred, y, lik):
    if lik is LikelihoodKind.GAUSSIAN_UNIT_VAR:
        r = y - pred
        return -0.5 * _LOG_2PI * y.shape[-1] - 0.5 * np.sum(r * r, axis=-1)
    # probabilities are clipped to [eps, 1 - eps] so a confident miss costs ~36 nats, not inf
    p = np.clip(pred, _EPS, 1.0 - _EPS)
    if lik is LikelihoodKind.BERNOULLI_FROM_PROB:
        return np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p), axis=-1)
    return np.sum(y * np.log(p), axis=-1)


def nlpd(pe: PredictiveEnsemble, y_test, lik) -> float:
    """Average negative log of the weighted mixture predictive density."""
    lik = LikelihoodKind(lik)
    y = np.asarray(y_test, dtype=float).reshape(pe.predictions.shape[1], -1)
    ll = _pointwise_loglik(pe.predictions, y[None], lik)
    with np.errstate(divide="ignore"):
        logw = np.log(pe.weights)
    return float(-np.mean(logsumexp(logw[:, None] + ll, axis=0)))


def rmse(pe: PredictiveEnsemble, reference) -> float:
    """RMSE between the weighted predictive mean and ``reference``."""
    m = pe.mean()
    ref = np.asarray(reference, dtype=float).reshape(m.shape)
    return float(np.sqrt(np.mean((m - ref) ** 2)))


def class_probabilities(pe: PredictiveEnsemble) -> np.ndarray:
    """Weighted predictive class probabilities ``(N, C)``."""
    p = pe.mean()
    if p.shape[1] == 1:
        p = np.column_stack([1.0 - p[:, 0], p[:, 0]])
    return p


def _label_index(labels, n):
    y = np.asarray(labels)
    if y.ndim == 2 and y.shape[1] > 1:
        return np.argmax(y, axis=1)
    return y.reshape(n).astype(int)


def accuracy(pe: PredictiveEnsemble, labels) -> float:
    """Fraction of points whose mixture argmax (ties to the lowest class) is correct."""
    p = class_probabilities(pe)
    return float(np.mean(np.argmax(p, axis=1) == _label_index(labels, p.shape[0])))


def ece(pe: PredictiveEnsemble, labels, n_bins: int = 10) -> float:
    """Expected calibration error with ``n_bins`` equal-width confidence bins."""
    if n_bins < 1:
        raise ValueError("n_bins must be at least 1")
    p = class_probabilities(pe)
    conf = p.max(axis=1)
    correct = (np.argmax(p, axis=1) == _label_index(labels, p.shape[0])).astype(float)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    # bins are (lo, hi]; the first one also takes 0
    b = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, n_bins - 1)
    total = 0.0
    for k in range(n_bins):
        m = b == k
        if m.any():
            total += m.mean() * abs(correct[m].mean() - conf[m].mean())
    return float(total)
