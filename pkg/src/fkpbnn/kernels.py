"""Markov kernels moving particles between SMC steps, and an HMC sampler.

All moves act on a stack of particles ``phi`` of shape ``(J, d)`` (a single
``(d,)`` vector is also accepted) and draw their randomness from one
generator, so a move is a deterministic function of the seed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .exceptions import KernelTargetError
from .models import GaussianPrior

DIVERGENCE_THRESHOLD = 1000.0


@dataclass(frozen=True)
class RandomWalk:
    """Gaussian random walk ``phi + sqrt(variance) z``; invariant for no target."""

    variance: float = 0.01

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("random-walk variance must be positive")


@dataclass(frozen=True)
class MRTH:
    """Random-walk Metropolis with ``n_steps`` isotropic Gaussian proposals."""

    n_steps: int = 10
    proposal_variance: float = 0.001

    def __post_init__(self):
        if int(self.n_steps) < 1 or not self.proposal_variance > 0:
            raise ValueError("MRTH needs n_steps >= 1 and a positive proposal variance")


@dataclass(frozen=True)
class OU:
    """Ornstein--Uhlenbeck flow (unit mean-reversion rate) run for ``terminal_time``,
    stationary at ``prior``; ``prior=None`` means the model prior."""

    terminal_time: float = 0.1
    prior: Optional[GaussianPrior] = None

    def __post_init__(self):
        if self.terminal_time < 0:
            raise ValueError("terminal_time must be non-negative")


@dataclass(frozen=True)
class HMC:
    """Hamiltonian Monte Carlo with identity mass matrix."""

    n_leapfrog: int = 100
    step_size: float = 0.01

    def __post_init__(self):
        if int(self.n_leapfrog) < 1 or not self.step_size > 0:
            raise ValueError("HMC needs n_leapfrog >= 1 and a positive step size")


_KINDS = {
    "random_walk": RandomWalk, "rw": RandomWalk,
    "mrth": MRTH, "rwmh": MRTH,
    "ou": OU,
    "hmc": HMC,
}


def parse_kernel(cfg) -> object:
    """Build a kernel from ``{"kind": name, **constants}`` or text like
    ``"mrth n_steps=10 proposal_variance=0.05"``."""
    if isinstance(cfg, (RandomWalk, MRTH, OU, HMC)):
        return cfg
    if isinstance(cfg, str):
        kind, *rest = cfg.split()
        cfg = {"kind": kind}
        for item in rest:
            k, _, v = item.partition("=")
            cfg[k] = v
    cfg = dict(cfg)
    kind = str(cfg.pop("kind")).lower()
    if kind not in _KINDS:
        raise ValueError(f"unknown kernel kind {kind!r}")
    cls = _KINDS[kind]
    if cls is OU and "prior" in cfg and not isinstance(cfg["prior"], GaussianPrior):
        raise ValueError("OU prior must be a GaussianPrior (omit it to use the model prior)")
    casts = {"n_steps": int, "n_leapfrog": int}
    kwargs = {k: casts.get(k, float)(v) if k != "prior" else v for k, v in cfg.items()}
    return cls(**kwargs)


def kernel_to_dict(kernel) -> dict:
    name = {RandomWalk: "random_walk", MRTH: "mrth", OU: "ou", HMC: "hmc"}[type(kernel)]
    out = {"kind": name}
    out.update({k: v for k, v in vars(kernel).items() if k != "prior"})
    return out


@dataclass
class LogTarget:
    """Unnormalised log-density over rows of ``phi`` and, optionally, its gradient."""

    log_density: Callable[[np.ndarray], np.ndarray]
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None


def _rows(phi):
    phi = np.asarray(phi, dtype=float)
    return (phi[None, :], True) if phi.ndim == 1 else (phi, False)


def rw_move(phi, variance, rng=None) -> np.ndarray:
    rng = np.random.default_rng(rng)
    phi = np.asarray(phi, dtype=float)
    step = rng.standard_normal(phi.shape)
    step *= np.sqrt(variance)
    step += phi
    return step


def ou_move(phi, spec: OU, rng=None, prior: GaussianPrior | None = None) -> np.ndarray:
    """Exact OU transition: ``mu + e^{-t}(phi - mu) + sqrt(v (1 - e^{-2t})) z``."""
    prior = spec.prior or prior
    if prior is None:
        raise ValueError("OU kernel needs a stationary prior")
    rng = np.random.default_rng(rng)
    phi = np.asarray(phi, dtype=float)
    a = np.exp(-spec.terminal_time)
    z = rng.standard_normal(phi.shape)
    return prior.mean + a * (phi - prior.mean) + np.sqrt(prior.var_diag * -np.expm1(-2.0 * spec.terminal_time)) * z


def mrth_move(phi, target: LogTarget, spec: MRTH, rng=None, return_acceptance=False):
    """``n_steps`` random-walk Metropolis iterations per particle."""
    rng = np.random.default_rng(rng)
    phi, single = _rows(phi)
    lp = np.asarray(target.log_density(phi), dtype=float)
    if np.any(np.isnan(lp)):
        raise KernelTargetError("target log-density is NaN at the current state")
    sd = np.sqrt(spec.proposal_variance)
    accepted = 0
    for _ in range(int(spec.n_steps)):
        prop = phi + sd * rng.standard_normal(phi.shape)
        lp_prop = np.asarray(target.log_density(prop), dtype=float)
        if np.any(np.isnan(lp_prop)):
            raise KernelTargetError("target log-density is NaN at a proposal")
        log_u = np.log(rng.uniform(size=phi.shape[0]))
        acc = log_u < lp_prop - lp
        phi = np.where(acc[:, None], prop, phi)
        lp = np.where(acc, lp_prop, lp)
        accepted += int(acc.sum())
    out = phi[0] if single else phi
    if return_acceptance:
        return out, accepted / (phi.shape[0] * int(spec.n_steps))
    return out


def leapfrog(q, p, grad_log_density, step_size, n_steps):
    """Leapfrog integration of ``H = -log pi(q) + |p|^2 / 2``."""
    q = np.array(q, dtype=float)
    p = np.array(p, dtype=float)
    p = p + 0.5 * step_size * grad_log_density(q)
    for k in range(n_steps):
        q = q + step_size * p
        if k < n_steps - 1:
            p = p + step_size * grad_log_density(q)
    p = p + 0.5 * step_size * grad_log_density(q)
    return q, p


@dataclass
class HMCInfo:
    acceptance_rate: float
    n_divergent: int


def hmc_sample(target: LogTarget, init, n_samples: int, n_burn: int, spec: HMC, rng=None,
               return_info=False):
    """Draw ``n_samples`` post-burn-in states from ``target``.

    ``init`` of shape ``(d,)`` runs one chain and returns ``(n_samples, d)``;
    shape ``(K, d)`` runs ``K`` independent chains in lockstep and returns
    ``(n_samples, K, d)``. Trajectories with a non-finite Hamiltonian or an
    energy error above ``DIVERGENCE_THRESHOLD`` are rejected and counted.
    """
    if target.grad is None:
        raise ValueError("HMC needs the gradient of the log-density")
    rng = np.random.default_rng(rng)
    q, single = _rows(init)
    lp = np.asarray(target.log_density(q), dtype=float)
    out = np.empty((n_samples,) + q.shape)
    n_acc = n_div = 0
    for it in range(n_burn + n_samples):
        p0 = rng.standard_normal(q.shape)
        try:
            with np.errstate(invalid="ignore", over="ignore"):
                q1, p1 = leapfrog(q, p0, target.grad, spec.step_size, int(spec.n_leapfrog))
                lp1 = np.asarray(target.log_density(q1), dtype=float)
        except FloatingPointError:
            # the model refused a non-finite state somewhere along the trajectory
            q1, p1, lp1 = q, p0, np.full(q.shape[0], -np.inf)
        with np.errstate(invalid="ignore", over="ignore"):
            h0 = -lp + 0.5 * np.sum(p0 * p0, axis=1)
            h1 = -lp1 + 0.5 * np.sum(p1 * p1, axis=1)
            dh = h1 - h0
        div = ~np.isfinite(dh) | (np.abs(dh) > DIVERGENCE_THRESHOLD)
        log_u = np.log(rng.uniform(size=q.shape[0]))
        acc = ~div & (log_u < -np.where(div, 0.0, dh))
        q = np.where(acc[:, None], q1, q)
        lp = np.where(acc, lp1, lp)
        n_div += int(div.sum())
        if it >= n_burn:
            out[it - n_burn] = q
            n_acc += int(acc.sum())
    samples = out[:, 0] if single else out
    if return_info:
        return samples, HMCInfo(n_acc / max(1, n_samples * q.shape[0]), n_div)
    return samples


def apply_kernel(kernel, phi, rng, target: LogTarget | None = None, prior: GaussianPrior | None = None):
    """Move every particle with ``kernel``; MRTH needs ``target``, OU a ``prior``."""
    if isinstance(kernel, RandomWalk):
        return rw_move(phi, kernel.variance, rng)
    if isinstance(kernel, OU):
        return ou_move(phi, kernel, rng, prior)
    if isinstance(kernel, MRTH):
        if target is None:
            raise ValueError("MRTH needs a target")
        return mrth_move(phi, target, kernel, rng)
    raise TypeError(f"{type(kernel).__name__} cannot be used as an SMC move")
