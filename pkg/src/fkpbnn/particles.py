"""Weighted particle ensembles: reweighting, ESS, resampling, evidence."""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .exceptions import WeightCollapseError


@dataclass(frozen=True)
class Ensemble:
    """``J`` particles in ``phi``-space with normalised log-weights.

    ``log_evidence`` accumulates the log normalising-constant increments of
    every reweighting applied so far.
    """

    positions: np.ndarray
    log_weights: np.ndarray
    log_evidence: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        lw = np.asarray(self.log_weights, dtype=float)
        if pos.shape[0] < 1 or lw.shape != (pos.shape[0],):
            raise ValueError(f"need J >= 1 positions and J log-weights, got {pos.shape} and {lw.shape}")
        if np.any(np.isnan(lw)) or np.any(lw == np.inf):
            raise ValueError("log-weights must be finite or -inf")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "log_weights", lw)

    @classmethod
    def uniform(cls, positions, log_evidence=0.0) -> "Ensemble":
        positions = np.asarray(positions, dtype=float)
        J = positions.shape[0]
        return cls(positions, np.full(J, -np.log(J)), log_evidence)

    @property
    def n_particles(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def with_positions(self, positions) -> "Ensemble":
        return replace(self, positions=positions)

    def save(self, path) -> None:
        """Snapshot to ``.npz`` or ``.csv`` (chosen by suffix)."""
        path = Path(path)
        if path.suffix == ".csv":
            d = self.dim
            header = ",".join([f"phi{k}" for k in range(d)] + ["log_weight"])
            body = np.column_stack([self.positions, self.log_weights])
            np.savetxt(path, body, delimiter=",", header=header, comments="",
                       fmt="%.17g", footer=f"# log_evidence={self.log_evidence!r}")
        else:
            np.savez(path, positions=self.positions, log_weights=self.log_weights,
                     log_evidence=np.float64(self.log_evidence))

    @classmethod
    def load(cls, path) -> "Ensemble":
        path = Path(path)
        if path.suffix == ".csv":
            lines = path.read_text().splitlines()
            log_ev = float(lines[-1].split("=", 1)[1])
            data = np.loadtxt(lines[1:-1], delimiter=",", ndmin=2)
            return cls(data[:, :-1], data[:, -1], log_ev)
        with np.load(path) as f:
            return cls(f["positions"], f["log_weights"], float(f["log_evidence"]))


def ess(e: Ensemble) -> float:
    """Effective sample size ``1 / sum_j w_j**2``."""
    return float(np.exp(-logsumexp(2.0 * e.log_weights)))


def reweight(e: Ensemble, log_potentials):
    """Multiply weights by ``exp(log_potentials)`` and renormalise.

    Returns ``(new_ensemble, increment)`` where ``increment`` is the log of the
    sum of the unnormalised new weights; it is also added to
    ``log_evidence``.
    """
    lp = np.asarray(log_potentials, dtype=float)
    if lp.shape != e.log_weights.shape:
        raise ValueError(f"expected {e.log_weights.shape[0]} log-potentials, got {lp.shape}")
    if np.any(np.isnan(lp)) or np.any(lp == np.inf):
        raise ValueError("log-potentials must be finite or -inf")
    unnorm = e.log_weights + lp
    inc = logsumexp(unnorm)
    if not np.isfinite(inc):
        raise WeightCollapseError("all particle weights are zero after reweighting")
    return Ensemble(e.positions, unnorm - inc, e.log_evidence + inc), float(inc)


class Scheme(str, enum.Enum):
    MULTINOMIAL = "multinomial"
    STRATIFIED = "stratified"
    SYSTEMATIC = "systematic"


def resample_indices(weights, scheme, rng, n=None) -> np.ndarray:
    """Ancestor indices drawn from normalised ``weights`` under ``scheme``."""
    rng = np.random.default_rng(rng)
    w = np.asarray(weights, dtype=float)
    n = w.shape[0] if n is None else n
    scheme = Scheme(str(scheme).lower())
    if scheme is Scheme.MULTINOMIAL:
        u = rng.uniform(size=n)
    elif scheme is Scheme.STRATIFIED:
        u = (np.arange(n) + rng.uniform(size=n)) / n
    else:
        u = (np.arange(n) + rng.uniform()) / n
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    return np.minimum(np.searchsorted(cdf, u, side="right"), w.shape[0] - 1)


def resample(e: Ensemble, scheme="stratified", rng=None, n_particles=None) -> Ensemble:
    """Resample to uniform weights; ``log_evidence`` is carried over.

    ``n_particles`` changes the ensemble size (defaults to the current one).
    """
    idx = resample_indices(e.weights, scheme, rng, n_particles)
    return Ensemble.uniform(e.positions[idx], e.log_evidence)


@dataclass(frozen=True)
class ResamplePolicy:
    """``threshold=None`` resamples always; otherwise when ``ESS < threshold * J``."""

    threshold: float | None = None

    def __post_init__(self):
        if self.threshold is not None and not 0.0 < self.threshold <= 1.0:
            raise ValueError("ESS threshold fraction must lie in (0, 1]")

    @classmethod
    def parse(cls, text) -> "ResamplePolicy":
        if isinstance(text, ResamplePolicy):
            return text
        text = str(text).strip().lower()
        if text == "always":
            return cls(None)
        if text.startswith("ess_below"):
            _, _, frac = text.partition(":")
            return cls(float(frac) if frac else 0.5)
        raise ValueError(f"unknown resampling policy {text!r}")

    def triggers(self, e: Ensemble) -> bool:
        return self.threshold is None or ess(e) < self.threshold * e.n_particles


ALWAYS = ResamplePolicy(None)


def maybe_resample(e: Ensemble, policy=ALWAYS, scheme="stratified", rng=None):
    """Resample iff ``policy`` triggers; returns ``(ensemble, resampled)``."""
    policy = ResamplePolicy.parse(policy)
    if policy.triggers(e):
        return resample(e, scheme, rng), True
    return e, False
