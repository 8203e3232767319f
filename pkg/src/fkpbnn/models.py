"""Priors, likelihoods and Feynman--Kac model bundles.

A model binds a training set and exposes, for a deterministic parameter
``psi`` and a stack of stochastic parameters ``phi`` of shape ``(J, d)``:

* ``log_potential(psi, phi, idx)``: ``sum_{n in idx} log p(y_n | phi_j; psi)``
  for each particle,
* ``grad_psi(psi, phi, idx)``: the per-particle gradients of that sum w.r.t.
  ``psi``, shape ``(J, w)``,
* ``expected_grad_psi(psi, phi, weights, idx)``: their weighted sum,
* ``grad_phi(psi, phi, idx)``: per-particle gradients w.r.t. ``phi``.

``idx`` is an integer index array into the bound data.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from ._parallel import map_chunks
from .exceptions import NonFiniteError, SingularParameterError
from .nn import LikelihoodKind

_LOG_2PI = float(np.log(2.0 * np.pi))

__all__ = [
    "GaussianPrior", "LikelihoodKind", "log_prior", "sample_prior", "crescent_loglik",
    "FkModel", "CrescentModel", "LinearGaussianModel", "PBNNModel",
]


@dataclass(frozen=True)
class GaussianPrior:
    """Diagonal Gaussian ``N(mean, diag(var_diag))``."""

    mean: np.ndarray
    var_diag: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.broadcast_to(np.asarray(self.var_diag, dtype=float), mean.shape).copy()
        if np.any(var <= 0):
            raise ValueError("prior variances must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var_diag", var)

    @classmethod
    def standard(cls, d: int) -> "GaussianPrior":
        return cls(np.zeros(d), np.ones(d))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def logpdf(self, phi):
        """Log-density; ``phi`` of shape ``(d,)`` gives a float, ``(J, d)`` a ``(J,)`` array."""
        phi = np.asarray(phi, dtype=float)
        r = phi - self.mean
        return (-0.5 * (self.dim * _LOG_2PI + np.sum(np.log(self.var_diag)))
                - 0.5 * np.sum(r * r / self.var_diag, axis=-1))

    def grad(self, phi):
        return -(np.asarray(phi, dtype=float) - self.mean) / self.var_diag

    def sample(self, n: int, rng=None) -> np.ndarray:
        if n < 1:
            raise ValueError("need at least one sample")
        rng = np.random.default_rng(rng)
        return self.mean + np.sqrt(self.var_diag) * rng.standard_normal((n, self.dim))


def log_prior(prior: GaussianPrior, phi) -> float:
    phi = np.asarray(phi, dtype=float)
    if phi.shape[-1] != prior.dim:
        raise ValueError(f"phi has length {phi.shape[-1]}, prior has dimension {prior.dim}")
    return prior.logpdf(phi)


def sample_prior(prior: GaussianPrior, J: int, seed=None) -> np.ndarray:
    return prior.sample(J, seed)


def _crescent_mean(psi, phi):
    return phi[..., 1] / psi + 0.5 * (phi[..., 0] ** 2 + psi ** 2)


def crescent_loglik(psi: float, phi, y: float) -> float:
    """``log N(y; phi_1/psi + (phi_0**2 + psi**2)/2, 1)``."""
    psi = float(psi)
    if psi == 0.0:
        raise SingularParameterError("the crescent model is undefined at psi = 0")
    r = y - _crescent_mean(psi, np.asarray(phi, dtype=float))
    return float(-0.5 * _LOG_2PI - 0.5 * r * r)


class FkModel:
    """Base class; subclasses implement the per-particle quantities."""

    prior: GaussianPrior
    dim_psi: int

    @property
    def dim_phi(self) -> int:
        return self.prior.dim

    @property
    def n_data(self) -> int:
        raise NotImplementedError

    def log_potential(self, psi, phi, idx) -> np.ndarray:
        raise NotImplementedError

    def grad_psi(self, psi, phi, idx) -> np.ndarray:
        raise NotImplementedError

    def grad_phi(self, psi, phi, idx) -> np.ndarray:
        raise NotImplementedError

    def expected_grad_psi(self, psi, phi, weights, idx) -> np.ndarray:
        """``sum_j weights[j] * grad_psi(psi, phi, idx)[j]``."""
        G = self.grad_psi(psi, phi, idx)
        bad = ~np.all(np.isfinite(G), axis=1)
        if np.any(bad):
            j = int(np.flatnonzero(bad)[0])
            raise NonFiniteError(f"non-finite gradient for particle {j}", particle=j)
        return np.asarray(weights, dtype=float) @ G

    def log_posterior(self, psi, phi, idx) -> np.ndarray:
        """Unnormalised ``log pi(phi) + log p(y_idx | phi; psi)``."""
        return self.prior.logpdf(phi) + self.log_potential(psi, phi, idx)

    def grad_log_posterior(self, psi, phi, idx) -> np.ndarray:
        return self.prior.grad(phi) + self.grad_phi(psi, phi, idx)


def _as_idx(idx):
    return np.asarray(idx, dtype=np.intp).reshape(-1)


class _SufficientStatsModel(FkModel):
    """Scalar-observation Gaussian models whose potentials depend on the
    data only through ``(n, sum y, sum y**2)`` over the index set."""

    def __init__(self, y, prior):
        self.y = np.asarray(y, dtype=float).reshape(-1)
        self.prior = prior
        self.dim_psi = 1

    @property
    def n_data(self) -> int:
        return self.y.shape[0]

    def _stats(self, idx):
        yi = self.y[_as_idx(idx)]
        return yi.shape[0], yi.sum(), np.dot(yi, yi)

    def _mean(self, psi, phi):
        raise NotImplementedError

    def log_potential(self, psi, phi, idx):
        n, s1, s2 = self._stats(idx)
        mu = self._mean(float(np.ravel(psi)[0]), np.atleast_2d(phi))
        return -0.5 * n * _LOG_2PI - 0.5 * (s2 - 2.0 * mu * s1 + n * mu * mu)

    def _residual_sum(self, psi, phi, idx):
        n, s1, _ = self._stats(idx)
        return s1 - n * self._mean(psi, np.atleast_2d(phi))


class CrescentModel(_SufficientStatsModel):
    """``y_n | phi ~ N(phi_1/psi + (phi_0**2 + psi**2)/2, 1)`` with
    ``phi ~ N(0, diag(2, 1))``."""

    def __init__(self, y, prior: GaussianPrior | None = None):
        super().__init__(y, prior or GaussianPrior(np.zeros(2), np.array([2.0, 1.0])))

    def _mean(self, psi, phi):
        if psi == 0.0:
            raise SingularParameterError("the crescent model is undefined at psi = 0")
        return _crescent_mean(psi, phi)

    def grad_psi(self, psi, phi, idx):
        psi = float(np.ravel(psi)[0])
        phi = np.atleast_2d(phi)
        rs = self._residual_sum(psi, phi, idx)
        return (rs * (psi - phi[:, 1] / psi ** 2))[:, None]

    def grad_phi(self, psi, phi, idx):
        psi = float(np.ravel(psi)[0])
        phi = np.atleast_2d(phi)
        rs = self._residual_sum(psi, phi, idx)
        return np.column_stack([rs * phi[:, 0], rs / psi])


class LinearGaussianModel(_SufficientStatsModel):
    """Conjugate model ``y_n = phi + psi + eps_n``, ``eps_n ~ N(0, 1)``,
    ``phi ~ N(m0, v0)`` with scalar ``phi`` and ``psi``.

    Evidence, its gradient and the posterior are available in closed form and
    serve as oracles for the samplers.
    """

    def __init__(self, y, prior_mean=0.0, prior_var=1.0):
        super().__init__(y, GaussianPrior([prior_mean], [prior_var]))

    def _mean(self, psi, phi):
        return phi[:, 0] + psi

    def grad_psi(self, psi, phi, idx):
        return self._residual_sum(float(np.ravel(psi)[0]), phi, idx)[:, None]

    def grad_phi(self, psi, phi, idx):
        return self._residual_sum(float(np.ravel(psi)[0]), phi, idx)[:, None]

    def posterior(self, psi, idx):
        """Mean and variance of ``p(phi | y_idx; psi)``."""
        n, s1, _ = self._stats(idx)
        psi = float(np.ravel(psi)[0])
        m0, v0 = self.prior.mean[0], self.prior.var_diag[0]
        var = 1.0 / (1.0 / v0 + n)
        return var * (m0 / v0 + s1 - n * psi), var

    def log_evidence(self, psi, idx) -> float:
        """``log p(y_idx; psi)``: ``y ~ N((m0 + psi) 1, I + v0 11^T)``."""
        yi = self.y[_as_idx(idx)]
        n = yi.shape[0]
        if n == 0:
            return 0.0
        psi = float(np.ravel(psi)[0])
        m0, v0 = self.prior.mean[0], self.prior.var_diag[0]
        r = yi - m0 - psi
        # det(I + v0 11^T) = 1 + n v0; inverse by Sherman-Morrison
        quad = r @ r - v0 * r.sum() ** 2 / (1.0 + n * v0)
        return float(-0.5 * (n * _LOG_2PI + np.log1p(n * v0) + quad))

    def grad_log_evidence(self, psi, idx) -> float:
        yi = self.y[_as_idx(idx)]
        n = yi.shape[0]
        m0, v0 = self.prior.mean[0], self.prior.var_diag[0]
        r = yi - m0 - float(np.ravel(psi)[0])
        return float(r.sum() / (1.0 + n * v0))


def _offset_errors(fn):
    """Wrap a chunk function so particle indices in errors refer to the full ensemble."""
    def wrapped(a, b):
        try:
            return fn(a, b)
        except NonFiniteError as err:
            if err.particle is not None:
                err.particle += a
                err.args = (f"{err.args[0]} (particle {err.particle})",)
            raise
    return wrapped


class PBNNModel(FkModel):
    """A partial Bayesian neural network bound to a training set.

    Per-particle work runs in fixed-size particle chunks, optionally on
    ``n_workers`` threads; results do not depend on the worker count.
    """

    def __init__(self, spec: nn.NetworkSpec, lik, x, y, prior: GaussianPrior | None = None,
                 n_workers: int = 1):
        self.spec = spec
        self.lik = LikelihoodKind(lik)
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float).reshape(self.x.shape[0], -1)
        self.prior = prior or GaussianPrior.standard(spec.dim_phi)
        if self.prior.dim != spec.dim_phi:
            raise ValueError("prior dimension does not match the stochastic layer")
        self.dim_psi = spec.dim_psi
        self.n_workers = n_workers
        self._cache_key = None
        self._cache = None

    @property
    def n_data(self) -> int:
        return self.x.shape[0]

    def _trunk(self, psi):
        psi = np.asarray(psi, dtype=float)
        key = psi.tobytes()
        if key != self._cache_key:
            self._cache = nn.trunk_forward(self.spec, psi, self.x)
            self._cache_key = key
        return self._cache

    def log_potential(self, psi, phi, idx):
        idx = _as_idx(idx)
        phi = np.atleast_2d(phi)
        if idx.size == 0:
            return np.zeros(phi.shape[0])
        tr = self._trunk(psi).take(idx)
        y = self.y[idx]
        parts = map_chunks(
            _offset_errors(lambda a, b: nn.log_likelihood(self.spec, psi, phi[a:b], None, y, self.lik, trunk=tr)),
            phi.shape[0], self.n_workers)
        return np.concatenate(parts)

    def _weighted(self, psi, phi, weights, idx, need_phi):
        psi = np.asarray(psi, dtype=float)
        idx = _as_idx(idx)
        tr = self._trunk(psi).take(idx)
        y = self.y[idx]

        def work(a, b):
            return nn.head_value_and_grad(self.spec, psi, phi[a:b], tr.out, y, self.lik, weights[a:b], need_phi)

        parts = map_chunks(_offset_errors(work), phi.shape[0], self.n_workers)
        g = np.zeros(self.dim_psi)
        dh = None
        for _, gp, _, d in parts:
            g += gp
            if d is not None:
                dh = d if dh is None else dh + d
        if self.spec.stochastic_layer > 0:
            g += nn.trunk_backward(self.spec, psi, tr, dh)
        g_phi = np.concatenate([p[2] for p in parts]) if need_phi else None
        return g, g_phi

    def expected_grad_psi(self, psi, phi, weights, idx):
        phi = np.atleast_2d(phi)
        return self._weighted(psi, phi, np.asarray(weights, dtype=float), idx, False)[0]

    def grad_psi(self, psi, phi, idx):
        phi = np.atleast_2d(phi)
        return np.stack([
            nn.value_and_grad(self.spec, psi, p, self.x[_as_idx(idx)], self.y[_as_idx(idx)], self.lik)[1]
            for p in phi
        ])

    def grad_phi(self, psi, phi, idx):
        phi = np.atleast_2d(phi)
        return self._weighted(psi, phi, np.ones(phi.shape[0]), idx, True)[1]

    def value_and_grads(self, psi, phi, idx):
        """Log-likelihood summed over ``idx`` with gradients w.r.t. ``psi`` and ``phi``
        for a single ``phi`` vector (used by MAP training)."""
        phi = np.atleast_2d(phi)
        idx = _as_idx(idx)
        ll, g_psi, g_phi = nn.value_and_grad(self.spec, psi, phi, self.x[idx], self.y[idx], self.lik,
                                             need_phi=True)
        return float(ll[0]), g_psi, g_phi[0]

    def predict(self, psi, phi, x) -> np.ndarray:
        """Per-particle network outputs ``(J, N, d_y)``."""
        phi = np.atleast_2d(phi)
        tr = nn.trunk_forward(self.spec, psi, x)
        parts = map_chunks(lambda a, b: nn.forward_particles(self.spec, psi, phi[a:b], x, trunk=tr),
                           phi.shape[0], self.n_workers)
        return np.concatenate(parts)
